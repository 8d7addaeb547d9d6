// Acceptance run: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../support/brute_force.hpp"
#include "../support/gradient_suite.hpp"
#include "../support/mask_cases.hpp"
#include "bott/bott.hpp"
#include "bott/cli.hpp"

namespace bott {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::map<int, std::string> lines;

void report(int id, const std::string& name, const Verdict& v) {
  const std::string line = std::string(v.pass ? "PASS" : "FAIL") + " [" + std::to_string(id) + "] " + name + ": " + v.detail;
  std::cerr << line << std::endl;
  lines[id] = line;
}

template <typename Fn>
void criterion(int id, const std::string& name, Fn&& fn) {
  try {
    report(id, name, fn());
  } catch (const std::exception& e) {
    report(id, name, {false, std::string("exception: ") + e.what()});
  }
}

// --- Linking-score contract, checked on every forward of the run ---------

struct ContractStats {
  std::atomic<long> forwards{0};
  std::atomic<long> violations{0};
  std::string first_violation;
  std::mutex mutex;

  void check(const LinkScoreMatrix& ls, const char* where) {
    ++forwards;
    const bool ok = ls.rows() == ls.cols() && (ls.array() >= 0.0).all() && (ls.array() <= 1.0).all() &&
                    (ls - ls.transpose()).cwiseAbs().maxCoeff() <= 1e-6 &&
                    (ls.diagonal().array() - 1.0).abs().maxCoeff() <= 1e-6;
    if (ok) return;
    if (violations++ == 0) {
      std::lock_guard lock(mutex);
      first_violation = where;
    }
  }
};

ContractStats contract;

LinkScorer checked_scorer(const Model& m) {
  return [&m](const SlidingWindow& w) {
    LinkScoreMatrix ls = forward(w, m.params, m.config);
    contract.check(ls, "tracker forward");
    return ls;
  };
}

// --- Shared synthetic benchmark -------------------------------------------

constexpr std::size_t kTrainScenes = 200;
constexpr std::size_t kTestScenes = 50;
constexpr std::uint64_t kTestOffset = 100000;
constexpr std::uint64_t kSeed = 2024;

NetworkConfig benchmark_network(const SynthConfig& sc, int n_enc) {
  NetworkConfig n;
  n.mlp_dims = {64, 64};
  n.n_enc = n_enc;
  n.n_heads = 4;
  n.ffn_dims = {128, 64};
  n.position_scale = 5.0;
  n.input_dim = kGeometricFeatures + static_cast<int>(sc.classes.size());
  return n;
}

TrainConfig benchmark_training(const SynthConfig& sc) {
  TrainConfig t;
  t.epochs = 3;
  t.batch_size = 4;
  t.K = 16;
  t.seed = kSeed;
  t.loss = loss_config_for(sc.class_names());
  return t;
}

Model train_model(const std::vector<SceneDB>& scenes, const NetworkConfig& net, const TrainConfig& cfg,
                  double* secs) {
  const auto t0 = Clock::now();
  TrainState st = train(scenes, init_train_state(net, cfg), cfg);
  if (secs) *secs = seconds_since(t0);
  return st.model;
}

EvalResult evaluate_all(const std::vector<std::vector<TrackFrame>>& preds, const std::vector<SceneDB>& scenes) {
  std::vector<SceneEval> items;
  for (std::size_t i = 0; i < scenes.size(); ++i) items.push_back({&preds[i], &scenes[i]});
  return evaluate(items);
}

std::vector<std::vector<TrackFrame>> run_online(const Model& m, const std::vector<SceneDB>& scenes, std::size_t K) {
  std::vector<std::vector<TrackFrame>> out;
  for (const auto& s : scenes) {
    OnlineTracker trk(make_online_config(s.class_names, K), checked_scorer(m));
    out.push_back(run_tracker(trk, s));
  }
  return out;
}

std::vector<std::vector<TrackFrame>> run_baseline(const std::vector<SceneDB>& scenes, std::size_t K) {
  std::vector<std::vector<TrackFrame>> out;
  for (const auto& s : scenes) {
    NearestNeighborTracker trk(make_online_config(s.class_names, K));
    out.push_back(run_tracker(trk, s));
  }
  return out;
}

std::string summary(const EvalResult& r) {
  return "MOTA " + fmt(r.mota()) + " IDS " + std::to_string(r.ids()) + " FP " + std::to_string(r.counts.fp) + " FN " +
         std::to_string(r.counts.fn);
}

/// Random K-frame windows drawn from `scenes`.
std::vector<SlidingWindow> sample_windows(const std::vector<SceneDB>& scenes, std::size_t count, std::size_t K,
                                          std::mt19937_64& rng) {
  std::vector<SlidingWindow> out;
  std::uniform_int_distribution<std::size_t> pick(0, scenes.size() - 1);
  while (out.size() < count) {
    const SceneDB& s = scenes[pick(rng)];
    if (s.frames.size() < K) continue;
    std::uniform_int_distribution<std::size_t> start(0, s.frames.size() - K);
    SlidingWindow w = window_at(s, start(rng), K);
    if (w.N() > 0) out.push_back(std::move(w));
  }
  return out;
}

// --- Criteria ---------------------------------------------------------------

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_case;
  const auto cases = testing::gradient_cases();
  for (std::uint64_t seed = 0; seed < 50; ++seed)
    for (const auto& c : cases) {
      std::mt19937_64 rng(seed);
      const double err = c.run(rng);
      if (!(err <= worst)) {
        worst = err;
        worst_case = c.name;
      }
    }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0, std::to_string(cases.size()) + " cases x 50 seeds, max rel err " +
                                           fmt(worst) + " (" + worst_case + "), " + fmt(secs, 3) + " s"};
}

Verdict assignment_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> dim(1, 7), cost(0, 99);
  int mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::MatrixXd c(dim(rng), dim(rng));
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = cost(rng);
    if (assignment_cost(c, hungarian(c)) != testing::brute_force_min(c)) ++mismatches;
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 10.0,
          "200 integer matrices up to 7x7, " + std::to_string(mismatches) + " mismatches, " + fmt(secs, 3) + " s"};
}

Verdict mask_suite() {
  const LossConfig cfg = testing::mask_case_loss();
  std::string bad;
  const auto cases = testing::mask_cases();
  for (const auto& c : cases)
    if (!(build_mask(c.window, cfg) == c.expected).all()) bad += " " + c.name;
  return {bad.empty(), std::to_string(cases.size()) + " hand-built windows" + (bad.empty() ? "" : ", wrong:" + bad)};
}

Verdict mining_bound(const SynthConfig& sc) {
  const auto scenes = gen_dataset(sc, 20, 500000);
  TrainConfig cfg = benchmark_training(sc);
  cfg.epochs = 2;
  cfg.windows_per_epoch = 400;
  const NetworkConfig net = benchmark_network(sc, 3);

  // Fixed probe batch scored before and after training.
  std::vector<TrainingSample> probe;
  for (std::size_t i = 0; i < 8; ++i) {
    TrainingSample s;
    s.window = window_at(scenes[i], 0, static_cast<std::size_t>(cfg.K));
    s.features = featurize(s.window);
    s.targets = build_link_targets(s.window, cfg.loss);
    probe.push_back(std::move(s));
  }
  TrainState st = init_train_state(net, cfg);
  const double before = batch_gradients(probe, st.model.params, net, cfg.loss).value().loss;

  long steps = 0, violations = 0;
  TrainOptions opt;
  opt.on_step = [&](const StepRecord& r) {
    ++steps;
    if (r.applied && r.n_neg_active > 4 * r.n_pos) ++violations;
  };
  st = train(scenes, std::move(st), cfg, opt);
  const double after = batch_gradients(probe, st.model.params, net, cfg.loss).value().loss;
  return {steps == 200 && violations == 0 && after < before,
          std::to_string(steps) + " steps, " + std::to_string(violations) + " bound violations, probe loss " +
              fmt(before) + " -> " + fmt(after)};
}

Verdict padding_invariance(const Model& m, const std::vector<SceneDB>& scenes) {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> pad(1, 32);
  double worst = 0;
  for (const auto& w : sample_windows(scenes, 100, 16, rng)) {
    const RawFeatureMatrix f = featurize(w);
    const LinkScoreMatrix plain = forward(w, m.params, m.config);
    const auto padded = forward_batch(pad_batch({f}, f.rows() + pad(rng)), m.params, m.config).front();
    contract.check(plain, "padding check");
    contract.check(padded, "padding check");
    worst = std::max(worst, (plain - padded).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-5, "100 windows, 1..32 padded slots, max |dLS| " + fmt(worst)};
}

Verdict translation_invariance(const Model& m, const std::vector<SceneDB>& scenes) {
  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> shift(-1e4, 1e4);
  const Params<double> params = cast_params<double>(m.params);
  double worst = 0;
  for (auto w : sample_windows(scenes, 100, 16, rng)) {
    const LinkScoreMatrix a = forward(w, params, m.config);
    const double dx = shift(rng), dy = shift(rng), dz = shift(rng);
    for (auto& f : w.frames)
      for (auto& b : f.boxes) {
        b.x += dx;
        b.y += dy;
        b.z += dz;
      }
    const LinkScoreMatrix b = forward(w, params, m.config);
    contract.check(a, "translation check");
    contract.check(b, "translation check");
    worst = std::max(worst, (a - b).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-9, "100 windows, shifts up to 1e4 m, max |dLS| " + fmt(worst)};
}

Verdict determinism() {
  const fs::path root = fs::temp_directory_path() / "bott_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string config = (root / "run.json").string();
  std::ofstream(config) << R"({
    "num_scenes": 4,
    "network": {"mlp_dims": [32, 32], "n_enc": 1, "n_heads": 2, "ffn_dims": [64, 32]},
    "train": {"epochs": 1, "stride": 4}
  })";
  auto cli = [](std::vector<std::string> args) {
    args.insert(args.begin(), "bott");
    std::vector<const char*> argv;
    for (const auto& s : args) argv.push_back(s.c_str());
    std::streambuf* saved = std::cout.rdbuf();
    std::ostringstream sink;
    std::cout.rdbuf(sink.rdbuf());
    const int code = dispatch(static_cast<int>(argv.size()), argv.data());
    std::cout.rdbuf(saved);
    if (code != 0) throw std::runtime_error("pipeline step exited with " + std::to_string(code));
  };
  auto slurp = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
  };
  std::vector<std::string> reports, checkpoints;
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = root / ("run" + std::to_string(run));
    const std::string data = (dir / "data").string(), model = (dir / "model").string();
    const std::string tracks = (dir / "tracks").string(), eval = (dir / "eval").string();
    cli({"synth", "--config", config, "--seed", "7", "--out", data});
    cli({"train", "--config", config, "--seed", "7", "--data", data, "--out", model});
    cli({"track", "--config", config, "--seed", "7", "--data", data, "--checkpoint", model + "/checkpoint.bott",
         "--out", tracks});
    cli({"eval", "--config", config, "--seed", "7", "--data", data, "--tracks", tracks, "--out", eval});
    reports.push_back(slurp(dir / "eval" / "eval.json"));
    checkpoints.push_back(slurp(dir / "model" / "checkpoint.bott"));
  }
  fs::remove_all(root);
  const bool same = !reports[0].empty() && reports[0] == reports[1] && checkpoints[0] == checkpoints[1];
  return {same, std::string("synth -> train -> track -> eval twice with seed 7: reports ") +
                    (reports[0] == reports[1] ? "identical" : "differ") + ", checkpoints " +
                    (checkpoints[0] == checkpoints[1] ? "identical" : "differ")};
}

Verdict bench_table(const Model& m) {
  BenchSettings b;
  b.boxes = {100, 200, 400, 800, 1600};
  b.repeats = 5;
  const auto rows = run_bench(m, b, kSeed);
  bool monotone = true;
  std::string table;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0 && rows[i].ms < rows[i - 1].ms) monotone = false;
    table += (i ? ", " : "") + std::to_string(rows[i].boxes) + ":" + fmt(rows[i].ms, 3) + "ms";
  }
  return {monotone, table};
}

int run() {
  const auto t0 = Clock::now();
  SynthConfig sc;
  sc.seed = kSeed;

  criterion(1, "gradient suite", gradient_suite);
  criterion(2, "assignment oracle", assignment_oracle);
  criterion(3, "mask suite", mask_suite);
  criterion(4, "mining bound", [&] { return mining_bound(sc); });

  std::cerr << "training benchmark models..." << std::endl;
  const auto train_set = gen_dataset(sc, kTrainScenes, 0);
  const auto test_set = gen_dataset(sc, kTestScenes, kTestOffset);
  double secs3 = 0, secs0 = 0;
  const Model model = train_model(train_set, benchmark_network(sc, 3), benchmark_training(sc), &secs3);
  const Model model0 = train_model(train_set, benchmark_network(sc, 0), benchmark_training(sc), &secs0);
  std::cerr << "trained in " << fmt(secs3, 4) << " s (3 encoders) and " << fmt(secs0, 4) << " s (0 encoders)"
            << std::endl;

  criterion(5, "padding invariance", [&] { return padding_invariance(model, test_set); });
  criterion(6, "translation invariance", [&] { return translation_invariance(model, test_set); });

  const EvalResult bott_native = evaluate_all(run_online(model, test_set, 16), test_set);
  criterion(8, "synthetic end-to-end", [&]() -> Verdict {
    const EvalResult base = evaluate_all(run_baseline(test_set, 16), test_set);
    const bool pass = bott_native.mota() > base.mota() && 2 * bott_native.ids() <= base.ids();
    return {pass, "BOTT " + summary(bott_native) + " vs baseline " + summary(base)};
  });

  criterion(9, "offline vs online", [&]() -> Verdict {
    SynthConfig occluded = sc;
    occluded.miss_prob = 0.3;
    const auto scenes = gen_dataset(occluded, kTestScenes, 2 * kTestOffset);
    std::vector<std::vector<TrackFrame>> offline;
    long gaps = 0;
    for (const auto& s : scenes) {
      const auto tracks = track_offline(s, checked_scorer(model), make_offline_config(s.class_names, 16));
      for (const auto& t : tracks)
        for (std::size_t k = 1; k < t.size(); ++k)
          if (t.boxes()[k].frame_idx != t.boxes()[k - 1].frame_idx + 1) ++gaps;
      offline.push_back(tracks_to_frames(tracks, s.frames));
    }
    const EvalResult off = evaluate_all(offline, scenes);
    const EvalResult on = evaluate_all(run_online(model, scenes, 16), scenes);
    return {off.ids() <= on.ids() && gaps == 0,
            "offline " + summary(off) + ", online " + summary(on) + ", gaps " + std::to_string(gaps)};
  });

  criterion(10, "frequency generalization", [&]() -> Verdict {
    std::vector<SceneDB> low;
    for (const auto& s : test_set) low.push_back(downsample(s, 2));
    const EvalResult r = evaluate_all(run_online(model, low, 8), low);
    const double drop = (bott_native.mota() - r.mota()) / std::abs(bott_native.mota());
    return {drop <= 0.2, "10 Hz/K=16 MOTA " + fmt(bott_native.mota()) + ", 5 Hz/K=8 MOTA " + fmt(r.mota()) +
                             ", relative loss " + fmt(100 * drop, 3) + "%"};
  });

  criterion(11, "encoder ablation", [&]() -> Verdict {
    const EvalResult r0 = evaluate_all(run_online(model0, test_set, 16), test_set);
    return {bott_native.mota() >= r0.mota(),
            "3 encoders MOTA " + fmt(bott_native.mota()) + ", 0 encoders MOTA " + fmt(r0.mota())};
  });

  criterion(7, "linking-score contract", [&]() -> Verdict {
    return {contract.violations == 0 && contract.forwards > 0,
            std::to_string(contract.forwards.load()) + " forwards checked, " +
                std::to_string(contract.violations.load()) + " violations" +
                (contract.first_violation.empty() ? "" : " (first in " + contract.first_violation + ")")};
  });

  criterion(12, "determinism", determinism);
  criterion(13, "bench table", [&] { return bench_table(model); });

  int failures = 0;
  for (const auto& [id, line] : lines) {
    std::cout << line << '\n';
    failures += line.starts_with("FAIL") ? 1 : 0;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << " in "
            << fmt(seconds_since(t0), 4) << " s" << std::endl;
  return failures == 0 ? 0 : 1;
}

}  // namespace
}  // namespace bott

int main() { return bott::run(); }
