#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <bit>
#include <functional>
#include <set>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "pv/config.hpp"
#include "pv/desk.hpp"
#include "pv/errors.hpp"
#include "pv/evaluation.hpp"
#include "support.hpp"

using namespace pv;

namespace {

const std::vector<std::string> kVoc = {"aeroplane", "bicycle", "bird", "boat", "bottle", "bus", "car",
                                       "cat", "chair", "cow", "diningtable", "dog", "horse", "motorbike",
                                       "person", "pottedplant", "sheep", "sofa", "train", "tvmonitor"};

int voc(const std::string& name) {
  return static_cast<int>(std::ranges::find(kVoc, name) - kVoc.begin());
}

EvaluatedSample evaluated(const std::string& id, std::set<int> targets, int top) {
  EvaluatedSample e;
  e.sample_id = id;
  e.targets = std::move(targets);
  e.top_class = top;
  e.prediction = {top};
  e.scores.posteriors.assign(kVoc.size(), 0.1);
  e.scores.posteriors[static_cast<std::size_t>(top)] = 0.9;
  e.outcome = classify_outcome(e.targets, e.prediction);
  return e;
}

void add(OutcomePartition& p, EvaluatedSample e) {
  switch (e.outcome) {
    case Outcome::correct: p.correct.push_back(e.sample_id); break;
    case Outcome::incorrect: p.incorrect.push_back(e.sample_id); break;
    case Outcome::mixed: p.mixed.push_back(e.sample_id); break;
  }
  p.evaluated.push_back(std::move(e));
}

// Synthetic VOC-style partition with `nc` correct and `ni` incorrect samples.
OutcomePartition synthetic_partition(int nc, int ni, unsigned long long seed = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> cls(0, 19);
  OutcomePartition p;
  for (int i = 0; i < nc; ++i) {
    const int c = cls(rng);
    add(p, evaluated("c" + std::to_string(i), {c}, c));
  }
  for (int i = 0; i < ni; ++i) {
    const int t = cls(rng);
    add(p, evaluated("i" + std::to_string(i), {t, (t + 3) % 20}, (t + 1) % 20));
  }
  return p;
}

std::multiset<std::string> as_multiset(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

double pair_count_u(const std::vector<double>& a, const std::vector<double>& b) {
  double u = 0;
  for (double x : a)
    for (double y : b) u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  return u;
}

// Normal approximation from first principles: tie groups counted directly.
MannWhitneyResult oracle_mwu(const std::vector<double>& a, const std::vector<double>& b, Tail tail) {
  const double na = a.size(), nb = b.size(), n = na + nb;
  std::vector<double> all(a);
  all.insert(all.end(), b.begin(), b.end());
  std::ranges::sort(all);
  double ties = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j] == all[i]) ++j;
    const double t = static_cast<double>(j - i);
    ties += t * t * t - t;
    i = j;
  }
  MannWhitneyResult r;
  r.u = pair_count_u(a, b);
  const double var = na * nb / 12.0 * ((n + 1) - ties / (n * (n - 1)));
  r.z = var > 0 ? (r.u - na * nb / 2) / std::sqrt(var) : 0.0;
  const double upper = 0.5 * std::erfc(r.z / std::sqrt(2.0)), lower = 0.5 * std::erfc(-r.z / std::sqrt(2.0));
  r.p = tail == Tail::greater ? upper : tail == Tail::less ? lower : std::min(1.0, 2 * std::min(upper, lower));
  return r;
}

std::vector<Response> all_answer(const std::vector<QuizQuestion>& quiz, int users,
                                 const std::function<std::string(const QuizQuestion&, int, std::mt19937_64&)>& pick,
                                 unsigned long long seed = 1) {
  std::mt19937_64 rng(seed);
  std::vector<Response> out;
  for (int u = 0; u < users; ++u)
    for (const auto& q : quiz) out.push_back({"u" + std::to_string(u), q.question_id, pick(q, u, rng)});
  return out;
}

}  // namespace

TEST_CASE("quiz shape and option invariants") {
  const OutcomePartition p = synthetic_partition(40, 30);
  const auto quiz = build_quiz(p, kVoc, 16, 14, 5);
  REQUIRE(quiz.size() == 30);
  int nc = 0, ni = 0;
  std::set<std::string> samples;
  for (const auto& q : quiz) {
    CHECK(q.options.size() == 5);
    CHECK(std::ranges::count(q.options, q.model_prediction) == 1);
    CHECK(std::ranges::count(q.options, std::string(kCantTell)) == 1);
    CHECK(as_multiset(q.options).size() == std::set<std::string>(q.options.begin(), q.options.end()).size());
    CHECK(samples.insert(q.sample_id).second);
    const EvaluatedSample* e = p.find(q.sample_id);
    REQUIRE(e);
    CHECK(q.outcome == e->outcome);
    CHECK(q.model_prediction == kVoc[static_cast<std::size_t>(e->top_class)]);
    (q.outcome == Outcome::correct ? nc : ni)++;
  }
  CHECK(nc == 16);
  CHECK(ni == 14);
  CHECK(quiz.front().question_id == "q01");
  CHECK(quiz.back().question_id == "q30");
}

TEST_CASE("quiz determinism under seed") {
  const OutcomePartition p = synthetic_partition(40, 30);
  const auto a = build_quiz(p, kVoc, 16, 14, 5), b = build_quiz(p, kVoc, 16, 14, 5), c = build_quiz(p, kVoc, 16, 14, 6);
  REQUIRE(a.size() == b.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].to_json() == b[i].to_json());
    differs |= a[i].to_json() != c[i].to_json();
  }
  CHECK(differs);
}

TEST_CASE("the tvmonitor example: two targets plus one random class") {
  OutcomePartition p;
  add(p, evaluated("img", {voc("person"), voc("train")}, voc("tvmonitor")));
  for (unsigned long long seed = 0; seed < 20; ++seed) {
    const auto quiz = build_quiz(p, kVoc, 0, 1, seed);
    REQUIRE(quiz.size() == 1);
    const auto opts = as_multiset(quiz[0].options);
    CHECK(opts.count("tvmonitor") == 1);
    CHECK(opts.count("person") == 1);
    CHECK(opts.count("train") == 1);
    CHECK(opts.count(std::string(kCantTell)) == 1);
    CHECK(quiz[0].outcome == Outcome::incorrect);
    CHECK(quiz[0].truth_labels.size() == 2);
  }
}

TEST_CASE("excess targets are dropped to three") {
  EvaluatedSample e = evaluated("many", {0, 1, 2, 3, 4, 5}, 2);
  e.prediction = {0, 1, 2, 3, 4, 5};
  e.outcome = Outcome::correct;
  OutcomePartition pc;
  add(pc, e);
  const auto quiz = build_quiz(pc, kVoc, 1, 0, 3);
  REQUIRE(quiz.size() == 1);
  for (const auto& o : quiz[0].options)
    if (o != std::string(kCantTell)) CHECK(voc(o) <= 5);
}

TEST_CASE("quiz errors") {
  const OutcomePartition p = synthetic_partition(10, 30);
  try {
    build_quiz(p, kVoc, 16, 14, 1);
    FAIL("expected ArgumentError");
  } catch (const ArgumentError& e) {
    CHECK(std::string(e.what()).find("short by 6 correct") != std::string::npos);
  }
  CHECK_THROWS_AS(build_quiz(p, {"a", "b", "c"}, 1, 1, 1), ArgumentError);
}

TEST_CASE("explainer variants ask the same questions") {
  const OutcomePartition p = synthetic_partition(40, 30);
  const auto quiz = build_quiz(p, kVoc, 16, 14, 5);
  const auto gc = quiz_variant(quiz, [](const QuizQuestion& q) { return "gc-" + q.sample_id; });
  const auto pv = quiz_variant(quiz, [](const QuizQuestion& q) { return "pv-" + q.sample_id; });
  for (std::size_t i = 0; i < quiz.size(); ++i) {
    CHECK(gc[i].options == pv[i].options);
    CHECK(as_multiset(gc[i].options) == as_multiset(quiz[i].options));
    CHECK(gc[i].panel_digest != pv[i].panel_digest);
    const auto shown = presented_options(quiz[i], "alice", 5);
    CHECK(as_multiset(shown) == as_multiset(quiz[i].options));
    CHECK(presented_options(quiz[i], "alice", 5) == shown);
  }
  QuizExport ex{5, quiz, {{"gradcam", gc}, {"pv", pv}}};
  const QuizExport back = QuizExport::from_json(ex.to_json());
  CHECK(back.to_json() == ex.to_json());
  CHECK(back.variants.at("pv")[3].panel_digest == pv[3].panel_digest);
}

TEST_CASE("scoring: perfect users, validation, order invariance") {
  const auto quiz = build_quiz(synthetic_partition(40, 30), kVoc, 16, 14, 2);
  const auto perfect = all_answer(quiz, 7, [](const QuizQuestion& q, int, std::mt19937_64&) { return q.model_prediction; });
  const ScoreSummary s = score_responses(quiz, perfect);
  CHECK(s.on_correct.accuracy == 1.0);
  CHECK(s.on_incorrect.accuracy == 1.0);
  CHECK(s.on_correct.total == 7 * 16);
  CHECK(s.on_correct.standard_error == 0.0);
  CHECK(s.per_user.size() == 7);

  CHECK_THROWS_AS(score_responses(quiz, {{"u", "q99", "cat"}}), ValidationError);
  CHECK_THROWS_AS(score_responses(quiz, {{"u", "q01", "not an option"}}), ValidationError);

  std::mt19937_64 rng(3);
  const auto mixed = all_answer(quiz, 20, [](const QuizQuestion& q, int, std::mt19937_64& r) {
    return q.options[std::uniform_int_distribution<std::size_t>(0, 4)(r)];
  });
  const ScoreSummary base = score_responses(quiz, mixed);
  auto shuffled_quiz = quiz;
  auto shuffled_resp = mixed;
  std::shuffle(shuffled_quiz.begin(), shuffled_quiz.end(), rng);
  std::shuffle(shuffled_resp.begin(), shuffled_resp.end(), rng);
  const ScoreSummary again = score_responses(shuffled_quiz, shuffled_resp);
  CHECK(again.on_correct.accuracy == base.on_correct.accuracy);
  CHECK(again.on_incorrect.accuracy == base.on_incorrect.accuracy);
  CHECK(again.on_correct.standard_error == doctest::Approx(base.on_correct.standard_error).epsilon(1e-12));
  CHECK(again.to_json().dump() == base.to_json().dump());
}

TEST_CASE("uniform random guessing among four answers scores 25%") {
  const auto quiz = build_quiz(synthetic_partition(40, 30), kVoc, 16, 14, 4);
  const auto guesses = all_answer(quiz, 10000, [](const QuizQuestion& q, int, std::mt19937_64& r) {
    std::vector<std::string> four;
    for (const auto& o : q.options)
      if (o != std::string(kCantTell)) four.push_back(o);
    return four[std::uniform_int_distribution<std::size_t>(0, 3)(r)];
  }, 9);
  const ScoreSummary s = score_responses(quiz, guesses);
  MESSAGE("random guessing: " << s.on_correct.accuracy << " / " << s.on_incorrect.accuracy);
  CHECK(std::abs(s.on_correct.accuracy - 0.25) <= 0.05);
  CHECK(std::abs(s.on_incorrect.accuracy - 0.25) <= 0.05);
}

TEST_CASE("the scorer echoes constructed rates") {
  // 1000 users: 1162 of 14000 incorrect-subset answers (8.3%) and 15344 of
  // 16000 correct-subset answers (95.9%) name the prediction.
  const auto quiz = build_quiz(synthetic_partition(40, 30), kVoc, 16, 14, 8);
  int inc_budget = 1162, cor_budget = 15344;
  std::vector<Response> rs;
  for (int u = 0; u < 1000; ++u)
    for (const auto& q : quiz) {
      int& budget = q.outcome == Outcome::correct ? cor_budget : inc_budget;
      std::string choice = std::string(kCantTell);
      if (budget > 0) {
        choice = q.model_prediction;
        --budget;
      }
      rs.push_back({"user" + std::to_string(u), q.question_id, choice});
    }
  const ScoreSummary s = score_responses(quiz, rs);
  CHECK(s.on_incorrect.accuracy == doctest::Approx(0.083).epsilon(1e-12));
  CHECK(s.on_correct.accuracy == doctest::Approx(0.959).epsilon(1e-12));
}

TEST_CASE("responses csv") {
  std::istringstream in("user_id,question_id,chosen_option\n"
                        "u1,q01,cat\r\n"
                        "\"u 2\",q02,\"I just can't tell\"\n"
                        "u3,q03,\"say \"\"hi\"\"\"\n");
  const auto rs = read_responses_csv(in);
  REQUIRE(rs.size() == 3);
  CHECK(rs[0].chosen_option == "cat");
  CHECK(rs[1].user_id == "u 2");
  CHECK(rs[1].chosen_option == std::string(kCantTell));
  CHECK(rs[2].chosen_option == "say \"hi\"");
  std::istringstream bad("user,question\nx,y\n");
  CHECK_THROWS_AS(read_responses_csv(bad), ValidationError);
}

TEST_CASE("mann-whitney examples") {
  const std::vector<double> a = {5, 6, 7}, b = {1, 2, 3};
  const auto r = mann_whitney_u(a, b, Tail::greater);
  CHECK(r.u == 9.0);
  CHECK(r.z > 0);
  CHECK(mann_whitney_u(b, a, Tail::greater).u == 0.0);
  CHECK(mann_whitney_u(b, a, Tail::less).p < 0.05);
  const std::vector<double> one = {1};
  CHECK(mann_whitney_u(one, one, Tail::two_sided).u == 0.5);
  CHECK(mann_whitney_u(one, one, Tail::two_sided).z == 0.0);
  CHECK_THROWS_AS(mann_whitney_u({}, one, Tail::less), ArgumentError);
  CHECK(parse_tail("less") == Tail::less);
  CHECK_THROWS_AS(parse_tail("sideways"), ArgumentError);
}

TEST_CASE("mann-whitney matches the pair-counting oracle for every split up to 8 + 8") {
  // Every way to divide a pool into (na, nb), for a distinct pool and a tie-heavy pool.
  long long cases = 0;
  for (int na = 1; na <= 8; ++na)
    for (int nb = 1; nb <= 8; ++nb) {
      const int n = na + nb;
      for (int tied = 0; tied < 2; ++tied) {
        std::vector<double> pool(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) pool[i] = tied ? static_cast<double>(i % 3) : static_cast<double>(i) * 1.5;
        for (unsigned mask = 0; mask < (1u << n); ++mask) {
          if (std::popcount(mask) != na) continue;
          std::vector<double> a, b;
          for (int i = 0; i < n; ++i) ((mask >> i) & 1u ? a : b).push_back(pool[i]);
          for (Tail tail : {Tail::less, Tail::greater, Tail::two_sided}) {
            const auto got = mann_whitney_u(a, b, tail);
            const auto want = oracle_mwu(a, b, tail);
            if (got.u != want.u || std::abs(got.z - want.z) > 1e-9 || std::abs(got.p - want.p) > 1e-9) {
              FAIL_CHECK("mismatch na=" << na << " nb=" << nb << " mask=" << mask);
            }
          }
          ++cases;
        }
      }
    }
  MESSAGE(cases << " splits checked");
  CHECK(cases > 0);
}

TEST_CASE("identical samples: permutation and normal p-values are both above 0.9") {
  for (int n = 5; n <= 8; ++n) {
    std::vector<double> a(static_cast<std::size_t>(n));
    std::iota(a.begin(), a.end(), 1.0);
    a[1] = a[0];
    const auto r = mann_whitney_u(a, a, Tail::two_sided);
    CHECK(r.p > 0.9);
    // Exact permutation distribution of U over all splits of the pooled data.
    std::vector<double> pool(a);
    pool.insert(pool.end(), a.begin(), a.end());
    const double centre = n * n / 2.0, observed = std::abs(r.u - centre);
    long long extreme = 0, total = 0;
    for (unsigned mask = 0; mask < (1u << (2 * n)); ++mask) {
      if (std::popcount(mask) != n) continue;
      std::vector<double> x, y;
      for (int i = 0; i < 2 * n; ++i) ((mask >> i) & 1u ? x : y).push_back(pool[i]);
      ++total;
      if (std::abs(pair_count_u(x, y) - centre) >= observed - 1e-12) ++extreme;
    }
    CHECK(static_cast<double>(extreme) / total > 0.9);
  }
}

TEST_CASE("decoder invariance: identical decoders agree perfectly") {
  const AppConfig cfg = pvtest::fixture_config();
  const ModelBundle bundle = load_model(cfg);
  const Encoder enc(bundle);
  const DatasetManifest m = load_dataset(cfg);
  auto samples = m.split("eval");
  samples.resize(70);
  const ImageSet held = load_image_set(m, samples, 32, 32, "eval70");
  const Decoder trained = load_configured_decoder(cfg);
  const Decoder untrained = build_decoder(DecoderConfig::desk(), 99);
  const InvarianceReport r = decoder_invariance(trained, trained, untrained, enc, held);
  REQUIRE(r.ssim_ab.size() == 70);
  CHECK(r.sample_ids.size() == 70);
  for (std::size_t i = 0; i < 70; ++i) {
    CHECK(r.ssim_ab[i] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r.mse_ab[i] == 0.0);
    CHECK(r.ssim_a_untrained[i] == r.ssim_b_untrained[i]);
  }
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  CHECK(r.mean_ssim_ab == doctest::Approx(mean(r.ssim_ab)).epsilon(1e-12));
  CHECK(r.mean_mse_a_untrained == doctest::Approx(mean(r.mse_a_untrained)).epsilon(1e-12));
  CHECK(r.mean_ssim_b_untrained == doctest::Approx(mean(r.ssim_b_untrained)).epsilon(1e-12));
  CHECK(r.mean_ssim_ab > r.mean_ssim_a_untrained);
  CHECK(r.to_json().at("summary").is_object());

  const Decoder wrong = build_decoder(DecoderConfig::halving({16, 4, 4}, 32, 32, 8, 1), 1);
  CHECK_THROWS_AS(decoder_invariance(trained, wrong, untrained, enc, held), ConfigError);
}
