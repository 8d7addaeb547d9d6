#include "bott/cli.hpp"

int main(int argc, char** argv) { return bott::dispatch(argc, argv); }
