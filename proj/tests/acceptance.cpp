// Acceptance gate: ten numbered checks, one printed pass/fail line each.
// Exit code 0 only if every selected criterion passes. An optional list of
// criterion numbers on the command line restricts the run (default: all).

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "reghorizon/config.hpp"
#include "reghorizon/gradcheck_suite.hpp"
#include "reghorizon/horizon.hpp"
#include "reghorizon/losses.hpp"
#include "reghorizon/model.hpp"
#include "reghorizon/trainer.hpp"

#ifndef REGHORIZON_CLI_PATH
#define REGHORIZON_CLI_PATH "./reghorizon"
#endif

using namespace reghorizon;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double scalar_distance(DistanceMetric m, const Tensor& a, const Tensor& b) {
  Graph g;
  std::vector<double> mask(static_cast<size_t>(a.rows()), 1.0);
  return distance(m, g.constant(a), g.constant(b), mask).val().values[0];
}

// --- planted linear-sweep fixture ------------------------------------------

struct PlantedBetas {
  double beta_cr = 0.245;
  double beta_rd = 0.159;
  double beta_t = -0.814;
  double beta_do = 13.8;
  double beta_B = 32.6;
  double metric(double a_cr, double a_rd, double a_t, double d) const {
    double c0 = beta_B + beta_t;
    return -(beta_cr * a_cr + beta_rd * a_rd + beta_t * a_t + beta_do * d) + c0;
  }
};

SweepSpec full_grid_spec() {
  SweepSpec spec;
  spec.base.weights.alpha_cr = 1.0;
  spec.base.weights.alpha_rd = 5.0;
  spec.base.weights.alpha_t = 1.0;
  spec.base.dropout = 0.1;
  spec.axes = {{"alpha_cr", {0.2, 1.0, 5.0}},
               {"alpha_rd", {2.0, 5.0, 8.0}},
               {"alpha_t", {1.0, 0.5, 0.1, 0.0}},
               {"dropout", {0.05, 0.10, 0.15, 0.20, 0.25, 0.30}}};
  return spec;
}

std::vector<RunRecord> planted_records(const PlantedBetas& b, double sigma, uint64_t seed) {
  std::vector<RunRecord> records;
  RngStream noise(seed, 0xF00D);
  uint64_t i = 0;
  for (const TrainConfig& cfg : expand_grid(full_grid_spec())) {
    RunRecord r;
    r.alpha_cr = cfg.weights.alpha_cr;
    r.alpha_rd = cfg.weights.alpha_rd;
    r.alpha_t = cfg.weights.alpha_t;
    r.dropout = cfg.dropout;
    r.seed = cfg.seed;
    r.dev_metric = b.metric(r.alpha_cr, r.alpha_rd, r.alpha_t, r.dropout) +
                   (sigma == 0.0 ? 0.0 : sigma * noise.normal(i, 0));
    ++i;
    records.push_back(std::move(r));
  }
  return records;
}

// --- end-to-end training arms (shared by criteria 7 and 8) -----------------

constexpr int kSeeds = 5;
// Schedule chosen so the baseline clears 0.90 with margin inside the
// single-core runtime budget: all seeds cross at ~step 400 at this peak lr.
constexpr double kArmMaxLr = 3e-3;
constexpr int kArmWarmup = 100;
constexpr int kBaselineMaxSteps = 500;
constexpr int kRdropMaxSteps = 2000;

double best_dev_on_curve(const RunRecord& r) {
  double best = 0.0;
  for (const auto& [step, metric] : r.curve) best = std::max(best, metric);
  return best;
}

std::vector<double> train_arm(const Corpus& corpus, double alpha_rd, int max_steps) {
  ModelConfig mc;
  std::vector<double> best;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    TrainConfig tc;
    tc.weights.alpha_rd = alpha_rd;
    tc.max_lr = kArmMaxLr;
    tc.warmup_steps = kArmWarmup;
    tc.max_steps = max_steps;
    tc.seed = static_cast<uint64_t>(seed);
    best.push_back(best_dev_on_curve(train_run(mc, corpus, tc).record));
  }
  return best;
}

std::vector<double>& baseline_arm(const Corpus& corpus) {
  static std::vector<double> cached;
  if (cached.empty()) cached = train_arm(corpus, 0.0, kBaselineMaxSteps);
  return cached;
}

// --- criterion runners -------------------------------------------------------

bool criterion_gradients(std::string& detail) {
  auto t0 = Clock::now();
  std::vector<GradCheckEntry> entries = gradcheck::full_suite();
  int failed = 0;
  for (const auto& e : entries)
    if (!e.pass) ++failed;
  double secs = seconds_since(t0);
  std::ostringstream os;
  os << entries.size() << " checks, " << failed << " failed, " << secs << " s";
  detail = os.str();
  return failed == 0 && secs < 60.0;
}

bool criterion_distance_oracles(std::string& detail) {
  Tensor a = Tensor::zeros({1, 2});
  Tensor b = Tensor::full({1, 2}, 2.0);
  double mse = scalar_distance(DistanceMetric::MSE, a, b);

  Tensor u = Tensor::zeros({1, 2});
  u.values = {1.0, 0.0};
  Tensor v = Tensor::zeros({1, 2});
  v.values = {-1.0, 0.0};
  double cos = scalar_distance(DistanceMetric::COS, u, v);

  Tensor p = Tensor::zeros({1, 2});
  p.values = {0.5, 0.5};
  Tensor q = Tensor::zeros({1, 2});
  q.values = {0.25, 0.75};
  double kl = scalar_distance(DistanceMetric::KL, p, q);
  // 0.5 * (sum p log p/q + sum q log q/p) by direct summation
  double kl_ref = 0.5 * ((0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0)) +
                         (0.25 * std::log(0.5) + 0.75 * std::log(1.5)));

  std::ostringstream os;
  os << "mse=" << mse << " cos=" << cos << " kl=" << kl;
  detail = os.str();
  return std::abs(mse - 4.0) <= 1e-12 && std::abs(cos - 2.0) <= 1e-12 &&
         std::abs(kl - 0.13730) <= 1e-4 && std::abs(kl - kl_ref) <= 1e-12;
}

bool criterion_consistency_identities(std::string& detail) {
  gradcheck::TotalLossFixture f = gradcheck::TotalLossFixture::make();
  bool ok = true;
  std::ostringstream os;

  // two-pass regularizer vanishes when dropout is off (identical passes)
  {
    LossWeights w;
    w.alpha_rd = 0.8;
    Graph g;
    BoundModel bm = bind(f.model, g);
    LossBreakdown lb = total_loss(w, f.batch, bm, RngStream(77, 0), /*dropout_on=*/false);
    double rd = lb.rd.val().values[0];
    os << "rd@p0=" << rd;
    ok = ok && rd == 0.0;
  }

  // both regularizers are linear in their weights
  {
    LossWeights w1;
    w1.alpha_t = 1.0;
    w1.alpha_cr = 0.5;
    w1.alpha_rd = 0.8;
    LossWeights w3 = w1;
    w3.alpha_cr *= 3.0;
    w3.alpha_rd *= 3.0;
    Graph g1, g2;
    BoundModel b1 = bind(f.model, g1), b3 = bind(f.model, g2);
    LossBreakdown l1 = total_loss(w1, f.batch, b1, RngStream(77, 0));
    LossBreakdown l3 = total_loss(w3, f.batch, b3, RngStream(77, 0));
    double cr1 = l1.cr.val().values[0], cr3 = l3.cr.val().values[0];
    double rd1 = l1.rd.val().values[0], rd3 = l3.rd.val().values[0];
    ok = ok && std::abs(cr3 - 3.0 * cr1) <= 1e-12 * std::max(1.0, std::abs(cr3));
    ok = ok && std::abs(rd3 - 3.0 * rd1) <= 1e-12 * std::max(1.0, std::abs(rd3));

    // decomposition identity on the composed objective
    double lhs = l3.total.val().values[0];
    double rhs = 1.0 * l3.ce_st.val().values[0] + w3.alpha_t * l3.ce_mt.val().values[0] + cr3 + rd3;
    os << " decomp_err=" << std::abs(lhs - rhs);
    ok = ok && std::abs(lhs - rhs) <= 1e-9;
  }

  // symmetric-KL consistency path equals the direct-summation oracle
  {
    LossWeights w;
    w.alpha_cr = 1.0;
    w.cr_tap = TapPoint::SOFTMAX;
    w.cr_metric = DistanceMetric::KL;
    Graph g;
    BoundModel bm = bind(f.model, g);
    RngStream rng(77, 0);
    TapBundle speech = forward_speech(bm, f.batch, rng.substream(1), false);
    TapBundle text = forward_text(bm, f.batch, rng.substream(3), false);
    double cr = consistency_loss(w, speech, text).val().values[0];
    double oracle = 0.0;
    for (size_t i = 0; i < speech.items.size(); ++i)
      oracle += symmetric_kl_direct(speech.items[i].softmax.val(), text.items[i].softmax.val());
    oracle /= static_cast<double>(speech.items.size());
    os << " kl_oracle_err=" << std::abs(cr - oracle);
    ok = ok && std::abs(cr - oracle) <= 1e-9;
  }

  detail = os.str();
  return ok;
}

bool criterion_regression_recovery(std::string& detail) {
  auto t0 = Clock::now();
  PlantedBetas b;
  bool ok = true;

  AnalyzeResult clean = analyze_records(planted_records(b, 0.0, 1));
  ok = ok && std::abs(clean.fit.beta_cr - b.beta_cr) <= 1e-9;
  ok = ok && std::abs(clean.fit.beta_rd - b.beta_rd) <= 1e-9;
  ok = ok && std::abs(clean.fit.beta_t - b.beta_t) <= 1e-9;
  ok = ok && std::abs(clean.fit.beta_do - b.beta_do) <= 1e-9;
  ok = ok && std::abs(clean.fit.beta_B - b.beta_B) <= 1e-9;
  ok = ok && clean.fit.beta_f == -clean.fit.beta_t;
  ok = ok && total_R(clean.fit, 0.0, 0.0, 1.0, 0.0) == 0.0;

  int trials = 200, hits = 0;
  for (int t = 0; t < trials; ++t) {
    AnalyzeResult res = analyze_records(planted_records(b, 0.05, 1000 + static_cast<uint64_t>(t)));
    bool hit = std::abs(res.fit.beta_cr - b.beta_cr) <= 3 * res.fit.std_errors[0] &&
               std::abs(res.fit.beta_rd - b.beta_rd) <= 3 * res.fit.std_errors[1] &&
               std::abs(res.fit.beta_t - b.beta_t) <= 3 * res.fit.std_errors[2] &&
               std::abs(res.fit.beta_do - b.beta_do) <= 3 * res.fit.std_errors[3];
    if (hit) ++hits;
  }
  double secs = seconds_since(t0);
  std::ostringstream os;
  os << "noiseless exact, noisy hits " << hits << "/" << trials << ", " << secs << " s";
  detail = os.str();
  return ok && hits >= static_cast<int>(0.95 * trials) && secs < 10.0;
}

bool criterion_peak_selection(std::string& detail) {
  bool ok = true;

  std::vector<std::pair<double, double>> fixture = {
      {0.05, 1.0}, {0.10, 3.0}, {0.15, 2.0}, {0.20, 1.0}};
  auto out = select_over_regularized(fixture);
  ok = ok && out.size() == 2 && out[0].second == 2.0 && out[1].second == 1.0;

  std::vector<std::pair<double, double>> rising = {{0.05, 1.0}, {0.10, 2.0}, {0.15, 3.0}};
  ok = ok && select_over_regularized(rising).empty();

  std::mt19937_64 gen(12345);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int t = 0; t < 1000 && ok; ++t) {
    size_t n = 2 + gen() % 10;
    std::vector<std::pair<double, double>> series;
    for (size_t i = 0; i < n; ++i)
      series.push_back({0.05 * static_cast<double>(i + 1), unif(gen)});
    auto sel = select_over_regularized(series);
    size_t argmax = 0;
    for (size_t i = 1; i < n; ++i)
      if (series[i].second > series[argmax].second) argmax = i;
    ok = ok && sel.size() == n - argmax - 1;
    for (size_t i = 0; i < sel.size() && ok; ++i)
      ok = sel[i] == series[argmax + 1 + i];
  }
  detail = "fixture + monotone + 1000 random series";
  return ok;
}

bool criterion_collapse(std::string& detail) {
  PlantedBetas b;
  AnalyzeResult res = analyze_records(planted_records(b, 0.0, 1));
  double worst = 0.0;
  std::set<std::string> families;
  for (const CollapseRow& row : res.collapse) {
    worst = std::max(worst, std::abs(row.metric - (res.fit.beta_B - row.R)));
    families.insert(row.family);
  }
  std::ostringstream os;
  os << res.collapse.size() << " points, max residual " << worst;
  detail = os.str();
  return worst <= 1e-9 && families.count("alpha_cr") && families.count("alpha_rd") &&
         families.count("alpha_t");
}

bool criterion_learnability(std::string& detail) {
  auto t0 = Clock::now();
  CorpusSpec cs;
  Corpus corpus = generate(cs);
  std::vector<double> best = baseline_arm(corpus);
  double med = median(best);
  double secs = seconds_since(t0);
  std::ostringstream os;
  os << "median best dev acc " << med << " over " << kSeeds << " seeds, " << secs << " s";
  detail = os.str();
  return med >= 0.90 && secs < 300.0;
}

bool criterion_rdrop_direction(std::string& detail) {
  CorpusSpec cs;
  Corpus corpus = generate(cs);
  std::vector<double> base = baseline_arm(corpus);
  std::vector<double> rdrop = train_arm(corpus, 5.0, kRdropMaxSteps);
  double diff = median(rdrop) - median(base);
  std::ostringstream os;
  os << "median dev acc: +rdrop " << median(rdrop) << " vs baseline " << median(base)
     << " (diff " << diff << ")";
  detail = os.str();
  return diff >= -0.01;
}

bool criterion_bootstrap(std::string& detail) {
  std::vector<double> same(20, 0.5);
  double p_tie = paired_bootstrap(same, same, 2000, 1);

  std::vector<double> hi(20, 1.0), lo(20, 0.0);
  double p_sep = paired_bootstrap(hi, lo, 2000, 1);

  std::vector<double> a, b;
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 0; i < 25; ++i) {
    a.push_back(unif(gen));
    b.push_back(unif(gen));
  }
  bool deterministic = paired_bootstrap(a, b, 2000, 42) == paired_bootstrap(a, b, 2000, 42);

  std::ostringstream os;
  os << "tie p=" << p_tie << " separated p=" << p_sep;
  detail = os.str();
  return p_tie == 1.0 && p_sep == 0.0 && deterministic;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::multiset<std::string> jsonl_line_set(const std::string& text) {
  std::multiset<std::string> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) out.insert(line);
  return out;
}

bool criterion_determinism(std::string& detail) {
  const std::string cli = REGHORIZON_CLI_PATH;
  const std::string work = "acceptance_tmp";
  std::filesystem::remove_all(work);
  std::filesystem::create_directories(work);

  nlohmann::json cfg = {
      {"corpus",
       {{"vocab_size", 11}, {"min_len", 2}, {"max_len", 5}, {"size", 160},
        {"frames_per_token", 3}, {"frame_dim", 6}, {"seed", 5}}},
      {"model",
       {{"d_model", 8}, {"n_heads", 2}, {"enc_layers", 1}, {"dec_layers", 1},
        {"ffn_dim", 16}, {"subsample_stride", 2}}},
      {"train",
       {{"max_steps", 60}, {"eval_every", 20}, {"warmup_steps", 10}, {"seed", 3}}},
      {"sweep", {{"axes", {{"dropout", {0.05, 0.1, 0.15, 0.2}}}}}},
      {"output_dir", work + "/out"}};
  {
    std::ofstream os(work + "/config.json");
    os << cfg.dump(2) << "\n";
  }

  auto run = [&](const std::string& args) {
    std::string cmd = cli + " " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str());
  };

  bool ok = true;
  std::ostringstream os;

  // the same training command twice must reproduce the run record byte for byte
  ok = ok && run("train " + work + "/config.json") == 0;
  std::string first = read_file(work + "/out/run.jsonl");
  ok = ok && run("train " + work + "/config.json") == 0;
  std::string second = read_file(work + "/out/run.jsonl");
  ok = ok && !first.empty() && first == second;
  os << "train bytes " << (first == second ? "identical" : "DIFFER");

  // sweep results must not depend on the worker count
  ok = ok && run("sweep " + work + "/config.json --workers 1 --set output_dir=" + work +
                 "/sweep1") == 0;
  ok = ok && run("sweep " + work + "/config.json --workers 4 --set output_dir=" + work +
                 "/sweep4") == 0;
  auto set1 = jsonl_line_set(read_file(work + "/sweep1/results.jsonl"));
  auto set4 = jsonl_line_set(read_file(work + "/sweep4/results.jsonl"));
  ok = ok && set1.size() == 4 && set1 == set4;
  os << ", sweep sets " << (set1 == set4 && !set1.empty() ? "identical" : "DIFFER");

  std::filesystem::remove_all(work);
  detail = os.str();
  return ok;
}

struct Criterion {
  int number;
  const char* name;
  bool (*run)(std::string&);
};

const Criterion kCriteria[] = {
    {1, "gradient suite", criterion_gradients},
    {2, "distance oracles", criterion_distance_oracles},
    {3, "consistency identities", criterion_consistency_identities},
    {4, "regression recovery", criterion_regression_recovery},
    {5, "peak selection", criterion_peak_selection},
    {6, "collapse property", criterion_collapse},
    {7, "end-to-end learnability", criterion_learnability},
    {8, "regularization direction", criterion_rdrop_direction},
    {9, "bootstrap conventions", criterion_bootstrap},
    {10, "determinism", criterion_determinism},
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const Criterion& c : kCriteria) {
    if (!selected.empty() && !selected.count(c.number)) continue;
    std::string det;
    bool ok = false;
    try {
      ok = c.run(det);
    } catch (const std::exception& e) {
      det = std::string("exception: ") + e.what();
    }
    std::printf("criterion %2d (%s): %s%s%s\n", c.number, c.name, ok ? "PASS" : "FAIL",
                det.empty() ? "" : " — ", det.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
