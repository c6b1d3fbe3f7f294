// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Runs on synthetic fixtures and shipped data only.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "clens/clens.hpp"
#include "oracles.hpp"

namespace {

using namespace clens;

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Pipeline {
  ConceptDictionary orig, tuned;
  Matching match;
  ShiftSet shifts;
  double seconds = 0.0;
};

Pipeline run_pipeline(const FixtureWorld& w, int k, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  Pipeline p;
  KMeansOptions km;
  km.k = k;
  km.seed = seed;
  p.orig = fit_dictionary(w.original, km).dictionary;
  p.tuned = fit_dictionary(w.finetuned, km).dictionary;
  p.match = bijective_match(similarity(p.orig, p.tuned));
  p.shifts = compute_shift_set(w.original, w.finetuned, assignments(project(w.original, p.orig)));
  p.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return p;
}

double recovered_cos(const Pipeline& p, const ConceptDictionary& shifted, int k) {
  const int j = p.match.map[static_cast<std::size_t>(k)];
  return cosine(shifted.concepts.col(k), p.tuned.concepts.col(j));
}

FixtureSpec base_spec(std::uint64_t seed, double lo, double hi) {
  FixtureSpec s;
  s.dim = 32;
  s.samples = 400;
  s.clusters = 8;
  s.noise_lo = lo;
  s.noise_hi = hi;
  s.seed = seed;
  return s;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// 1. Noise-free recovery: every shifted concept lands on its fine-tuned match.
Outcome synthetic_recovery() {
  Outcome o;
  double worst = 1.0, slowest = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const FixtureWorld w = make_fixture_world(base_spec(seed, 0.0, 0.0));
    Pipeline p = run_pipeline(w, 8, seed);
    const ConceptDictionary shifted = apply_shift(p.orig, p.shifts, 1.0);
    for (int k = 0; k < 8; ++k) worst = std::min(worst, recovered_cos(p, shifted, k));
    slowest = std::max(slowest, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  o.pass = worst >= 0.999 && slowest < 5.0;
  o.detail = fmt("min cos %.6f over 5 seeds x 8 concepts", worst) + fmt(", slowest run %.3f s", slowest);
  return o;
}

// 2. Consistency vs CR rank correlation under per-cluster drift noise.
Outcome consistency_correlation() {
  Outcome o;
  int passing = 0;
  std::string rhos;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const FixtureWorld w = make_fixture_world(base_spec(seed, 0.05, 1.0));
    Pipeline p = run_pipeline(w, 8, seed);
    const ConceptDictionary shifted = apply_shift(p.orig, p.shifts, 1.0);
    const RecoveryReport r = concept_recovery(p.orig, shifted, p.tuned, p.match, p.shifts);
    const double rho = r.spearman.value_or(-2.0);
    if (r.correlated == 8 && rho > 0.5) ++passing;
    rhos += fmt(rhos.empty() ? "%.2f" : " %.2f", rho);
  }
  o.pass = passing >= 9;
  o.detail = std::to_string(passing) + "/10 seeds with rho > 0.5 (" + rhos + ")";
  return o;
}

// 3. Alpha sweep: alpha = 1 beats 0, 0.5 and 2 on noise-free fixtures.
Outcome alpha_sweep() {
  Outcome o;
  const FixtureWorld w = make_fixture_world(base_spec(7, 0.0, 0.0));
  Pipeline p = run_pipeline(w, 8, 7);
  auto mean_cos = [&](double alpha) {
    const ConceptDictionary s = apply_shift(p.orig, p.shifts, alpha);
    double total = 0.0;
    for (int k = 0; k < 8; ++k) total += recovered_cos(p, s, k);
    return total / 8.0;
  };
  const double at1 = mean_cos(1.0);
  std::string d = fmt("alpha=1: %.6f", at1);
  for (double a : {0.0, 0.5, 2.0}) {
    const double v = mean_cos(a);
    o.pass = o.pass && at1 > v;
    d += fmt(", alpha=%g: ", a) + fmt("%.6f", v);
  }
  o.detail = d;
  return o;
}

// 4. Bijective matching equals the exhaustive permutation minimum.
Outcome matching_oracle() {
  Outcome o;
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int exact = 0, permutations = 0;
  for (int t = 0; t < 200; ++t) {
    const int k = 1 + t % 6;
    SimilarityMatrix s;
    s.values.resize(k, k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) s.values(i, j) = u(gen);
    const Matching m = bijective_match(s);
    const auto best = oracle::min_cost_permutation((1.0 - s.values.array()).matrix());
    std::vector<int> sorted = m.map;
    std::sort(sorted.begin(), sorted.end());
    bool is_perm = true;
    for (int i = 0; i < k; ++i) is_perm = is_perm && sorted[static_cast<std::size_t>(i)] == i;
    permutations += is_perm;
    exact += m.total_cost == best.cost;
  }
  o.pass = exact == 200 && permutations == 200;
  o.detail = std::to_string(exact) + "/200 exact optimum, " + std::to_string(permutations) + "/200 permutations";
  return o;
}

// 5. K-means (K = 2) against exhaustive partitions, plus monotone inertia.
Outcome kmeans_oracle() {
  Outcome o;
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd(0.0, 1.0);
  int optimal = 0, monotone = 0;
  double worst_rel = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int n = 3 + t % 10;  // 3..12
    HiddenStates h;
    h.data.resize(2, n);
    for (int m = 0; m < n; ++m)
      for (int d = 0; d < 2; ++d) h.data(d, m) = static_cast<float>(nd(gen) + (m % 3 == 0 ? 2.0 : 0.0));
    h.sample_ids = default_sample_ids(n);
    KMeansOptions km;
    km.k = 2;
    km.seed = static_cast<std::uint64_t>(t);
    const FitResult r = fit_dictionary(h, km);
    const Eigen::MatrixXd pts = h.data.cast<double>();
    const double best = oracle::best_two_partition(pts);
    // Same labeling convention as the oracle (sample 0 in cluster 0) so both
    // sums run in the same order.
    std::vector<int> labels = r.labels;
    if (labels[0] == 1)
      for (auto& l : labels) l = 1 - l;
    const double mine = oracle::partition_inertia(pts, labels, 2);
    optimal += mine == best;
    worst_rel = std::max(worst_rel, std::abs(r.dictionary.inertia - best) / std::max(best, 1e-300));
    bool mono = true;
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i)
      mono = mono && r.inertia_history[i] <= r.inertia_history[i - 1];
    monotone += mono;
  }
  o.pass = optimal == 100 && monotone == 100 && worst_rel <= 1e-6;
  o.detail = std::to_string(optimal) + "/100 optimal partitions, " + std::to_string(monotone) +
             "/100 monotone histories" + fmt(", max reported-inertia rel err %.2e", worst_rel);
  return o;
}

TextGrounding grounding(std::vector<std::string> words) {
  TextGrounding g;
  g.words = std::move(words);
  return g;
}

// 6. T-Overlap properties.
Outcome t_overlap_properties() {
  Outcome o;
  std::mt19937_64 gen(6);
  const std::vector<std::string> vocab = {"a", "b", "c", "d", "e", "f", "g", "h", "\xE2\x96\x81" "a", "\xC4\xA0" "b"};
  bool self = true, range = true;
  for (int t = 0; t < 500; ++t) {
    auto pick = [&] {
      std::vector<std::string> w;
      const int n = 1 + static_cast<int>(gen() % 6);
      for (int i = 0; i < n; ++i) w.push_back(vocab[gen() % vocab.size()]);
      return grounding(w);
    };
    const TextGrounding g1 = pick(), g2 = pick();
    self = self && t_overlap(g1, g1) == 100.0;
    const double v = t_overlap(g1, g2);
    range = range && v >= 0.0 && v <= 100.0;
  }
  const TextGrounding small = grounding({"cat", "dog"});
  const TextGrounding big = grounding({"cat", "dog", "fish", "bird"});
  const bool asym = t_overlap(small, big) == 100.0 && t_overlap(big, small) == 50.0;
  const double fifty = t_overlap(grounding({"street", "road", "city", "park"}), grounding({"road", "park", "tree", "sky"}));
  o.pass = self && range && asym && fifty == 50.0;
  o.detail = std::string("self=100 ") + (self ? "ok" : "FAIL") + ", range " + (range ? "ok" : "FAIL") +
             ", asymmetry " + (asym ? "ok" : "FAIL") + fmt(", street/road case %.1f", fifty);
  return o;
}

// 7. Steering algebra.
Outcome steering_algebra() {
  Outcome o;
  std::mt19937_64 gen(7);
  std::normal_distribution<float> nd(0.0f, 3.0f);
  auto random_states = [&](int d, int m, float offset) {
    HiddenStates h;
    h.data.resize(d, m);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < m; ++j) h.data(i, j) = nd(gen) + offset;
    h.sample_ids = default_sample_ids(m);
    return h;
  };
  bool antisym = true, identity = true, roundtrip = true, fine = true, transport = true;
  double worst_ulps = 0.0, worst_transport = 0.0;
  for (int t = 0; t < 50; ++t) {
    const HiddenStates a = random_states(16, 30, 0.0f), b = random_states(16, 20, 5.0f);
    const SteeringVector ab = coarse_vector(b, a, 3), ba = coarse_vector(a, b, 3);
    antisym = antisym && (ab.direction + ba.direction).cwiseAbs().maxCoeff() == 0.0f;

    const HiddenStates same = apply_steering(a, ab, 0.0);
    identity = identity && std::memcmp(same.data.data(), a.data.data(), sizeof(float) * a.data.size()) == 0;

    const double alpha = 0.25 + 2.0 * (t % 4);
    // The stored intermediate is f32, so round-off is measured in ulps of the
    // largest magnitude the element takes on the way.
    const HiddenStates there = apply_steering(a, ab, alpha);
    const HiddenStates back = apply_steering(there, ab, -alpha);
    for (Eigen::Index i = 0; i < a.data.size(); ++i) {
      worst_ulps = std::max(
          worst_ulps, oracle::round_trip_ulps(a.data.data()[i], there.data.data()[i], back.data.data()[i]));
    }

    ConceptDictionary d;
    d.concepts = random_states(16, 5, 0.0f).data;
    const auto fv = fine_vectors(d, 3);
    for (const auto& s : fv)
      for (const auto& r : fv)
        if (s.src_concept == r.dst_concept && s.dst_concept == r.src_concept)
          fine = fine && (s.direction + r.direction).cwiseAbs().maxCoeff() == 0.0f;

    // Two-cluster world: source columns moved by s_c land on the target mean.
    const HiddenStates moved = apply_steering(a, ab, 1.0);
    const Eigen::VectorXd got = moved.data.cast<double>().rowwise().mean();
    const Eigen::VectorXd want = b.data.cast<double>().rowwise().mean();
    const double err = (got - want).norm() / std::max(1.0, want.norm());
    worst_transport = std::max(worst_transport, err);
  }
  roundtrip = worst_ulps <= 1.0;
  transport = worst_transport <= 1e-6;
  o.pass = antisym && identity && roundtrip && fine && transport;
  o.detail = std::string("antisymmetry ") + (antisym ? "ok" : "FAIL") + ", alpha=0 identity " +
             (identity ? "ok" : "FAIL") + fmt(", round-trip max %.2f ulp", worst_ulps) + ", s_ij+s_ji " +
             (fine ? "ok" : "FAIL") + fmt(", mean transport rel err %.2e", worst_transport);
  return o;
}

// 8. Direction selection: worked example and permutation invariance.
Outcome direction_selection() {
  Outcome o;
  SteeringVector v;
  v.direction = Vector::Zero(1);
  const AnswerCounts baseline = {{"no", 0}, {"off", 0}, {"4", 0}};
  const AnswerCounts steered = {{"no", 500}, {"off", 20}, {"4", 5}};
  const auto s = select_directions({v}, baseline, {steered}, 3);
  const bool worked = s[0].score == 487.5 && s[0].primary_answers == std::vector<std::string>{"no"};

  std::mt19937_64 gen(8);
  std::vector<double> values;
  for (int i = 0; i < 12; ++i) values.push_back(static_cast<double>(static_cast<int>(gen() % 2000) - 500) + 0.5 * i);
  std::vector<std::string> names;
  for (int i = 0; i < 12; ++i) names.push_back("ans" + std::to_string(i));
  double reference = 0.0;
  bool invariant = true;
  for (int t = 0; t < 50; ++t) {
    std::vector<std::string> shuffled = names;
    std::shuffle(shuffled.begin(), shuffled.end(), gen);
    AnswerCounts base, st;
    for (std::size_t i = 0; i < values.size(); ++i) {
      base[shuffled[i]] = 1000.0;
      st[shuffled[i]] = 1000.0 + values[i];
    }
    const double score = select_directions({v}, base, {st}, 6)[0].score;
    if (t == 0) reference = score;
    invariant = invariant && score == reference;
  }
  o.pass = worked && invariant;
  o.detail = fmt("worked example score %.1f", s[0].score) + ", 50 shuffles " + (invariant ? "invariant" : "DIFFER");
  return o;
}

// 9. ASR on the shipped fixture, plus monotonicity under appended refusals.
Outcome asr_fixture() {
  Outcome o;
  const auto responses = read_lines(fs::path(CLENS_DATA_DIR) / "fixtures" / "asr_responses_100.txt");
  const auto refusals = load_refusal_strings(fs::path(CLENS_DATA_DIR) / "refusal_strings.txt");
  const double asr = attack_success_rate(responses, refusals);
  std::vector<std::string> refusing, complying;
  for (const auto& r : responses) (is_refusal(r, refusals) ? refusing : complying).push_back(r);

  std::mt19937_64 gen(9);
  bool monotone = true;
  for (int t = 0; t < 1000; ++t) {
    std::vector<std::string> seq;
    const int start = 1 + static_cast<int>(gen() % 20);
    for (int i = 0; i < start; ++i) seq.push_back(responses[gen() % responses.size()]);
    double prev = attack_success_rate(seq, refusals);
    const int appends = 1 + static_cast<int>(gen() % 20);
    for (int i = 0; i < appends; ++i) {
      seq.push_back(refusing[gen() % refusing.size()]);
      const double next = attack_success_rate(seq, refusals);
      monotone = monotone && next <= prev;
      prev = next;
    }
  }
  o.pass = asr == 0.45 && responses.size() == 100 && complying.size() == 45 && monotone;
  o.detail = fmt("ASR %.17g", asr) + " (" + std::to_string(complying.size()) + "/" + std::to_string(responses.size()) +
             " non-refusals), monotone over 1000 sequences " + (monotone ? "ok" : "FAIL");
  return o;
}

// 10. Gender conversion counting.
Outcome gender_conversion() {
  Outcome o;
  const auto g = builtin_lexicon("gendered"), n = builtin_lexicon("neutral");
  const auto table = count_gender_conversions(
      {"A young boy with curly hair is playing a video game.", "A man riding a dirt bike on a beach."},
      {"A child with curly hair is playing a video game.", "A person riding a dirt bike on a beach."}, g, n);
  const bool pairs = table.total_gendered == 2 && table.converted == 2;

  std::mt19937_64 gen(10);
  const std::vector<std::string> pool = {"man", "woman", "person", "child", "dog", "street", "Boy", "LADY",
                                         "human", "kid", "red", "bike", "female", "adult", "tree"};
  bool invariant = true;
  for (int t = 0; t < 500; ++t) {
    std::vector<std::string> before, after;
    const int n_caps = static_cast<int>(gen() % 30);
    for (int c = 0; c < n_caps; ++c) {
      auto caption = [&] {
        std::string s;
        const int words = 1 + static_cast<int>(gen() % 8);
        for (int i = 0; i < words; ++i) s += (i ? " " : "") + pool[gen() % pool.size()];
        return s;
      };
      before.push_back(caption());
      after.push_back(caption());
    }
    const auto r = count_gender_conversions(before, after, g, n);
    invariant = invariant && r.converted <= r.total_gendered && r.total_gendered <= before.size();
  }
  o.pass = pairs && invariant;
  o.detail = "table pairs " + std::to_string(table.converted) + "/" + std::to_string(table.total_gendered) +
             " converted, converted <= total over 500 corpora " + (invariant ? "ok" : "FAIL");
  return o;
}

// 11. NPY round trip and corrupted-header rejection.
Outcome format_round_trip() {
  Outcome o;
  const fs::path dir = fs::temp_directory_path() / ("clens_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<float> u(-1e6f, 1e6f);
  const float specials[] = {0.0f, -0.0f, std::numeric_limits<float>::min(), std::numeric_limits<float>::denorm_min(),
                            std::numeric_limits<float>::max(), -std::numeric_limits<float>::max(), 1.0f / 3.0f};
  int exact = 0;
  for (int t = 0; t < 1000; ++t) {
    const int rows = 1 + static_cast<int>(gen() % 40), cols = 1 + static_cast<int>(gen() % 40);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = gen() % 8 == 0 ? specials[gen() % 7] : u(gen) * std::pow(10.0f, static_cast<float>(gen() % 20) - 15);
    const fs::path p = dir / "m.npy";
    save_matrix(m, p);
    const Matrix back = load_matrix(p);
    exact += back.rows() == rows && back.cols() == cols &&
             std::memcmp(back.data(), m.data(), sizeof(float) * m.size()) == 0;
  }

  // Corruptions of a valid 3x2 file.
  Matrix small(3, 2);
  small << 1, 2, 3, 4, 5, 6;
  const fs::path good = dir / "good.npy";
  save_matrix(small, good);
  std::string bytes;
  {
    std::ifstream in(good, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  auto replace = [](std::string s, const std::string& from, const std::string& to) {
    s.replace(s.find(from), from.size(), to);
    return s;
  };
  const std::vector<std::string> corrupt = {
      "\x92" + bytes.substr(1),
      bytes.substr(0, 6) + std::string("\x02\x00", 2) + bytes.substr(8),
      replace(bytes, "'<f4'", "'<f8'"),
      replace(bytes, "'<f4'", "'>f4'"),
      replace(bytes, "False", "True "),
      replace(bytes, "(3, 2)", "(3, 3)"),
      replace(bytes, "(3, 2)", "(3,)  "),
      replace(bytes, "'shape'", "'shapo'"),
      bytes.substr(0, bytes.size() - 4),
      bytes + std::string(4, '\0'),
      bytes.substr(0, 9),
      bytes.substr(0, 8) + std::string("\xff\xff", 2) + bytes.substr(10),
  };
  int rejected = 0;
  for (std::size_t i = 0; i < corrupt.size(); ++i) {
    const fs::path p = dir / ("bad" + std::to_string(i) + ".npy");
    std::ofstream(p, std::ios::binary) << corrupt[i];
    try {
      (void)load_matrix(p);
    } catch (const Error&) {
      ++rejected;
    }
  }
  fs::remove_all(dir);
  o.pass = exact == 1000 && rejected == static_cast<int>(corrupt.size());
  o.detail = std::to_string(exact) + "/1000 bit-exact, " + std::to_string(rejected) + "/" +
             std::to_string(corrupt.size()) + " corrupted files rejected";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"synthetic recovery", synthetic_recovery},
      {"consistency-recovery correlation", consistency_correlation},
      {"alpha sweep", alpha_sweep},
      {"bijective matching oracle", matching_oracle},
      {"k-means oracle", kmeans_oracle},
      {"t-overlap properties", t_overlap_properties},
      {"steering algebra", steering_algebra},
      {"direction selection", direction_selection},
      {"asr fixture", asr_fixture},
      {"gender conversion", gender_conversion},
      {"format round-trip", format_round_trip},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = std::string("threw: ") + e.what();
    }
    failed += !r.pass;
    std::printf("%s [%zu] %s: %s\n", r.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, r.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
