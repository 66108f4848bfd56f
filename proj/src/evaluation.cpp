#include "pv/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include "pv/digest.hpp"
#include "pv/errors.hpp"
#include "pv/image_io.hpp"

namespace pv {

using nlohmann::json;

std::string to_string(Explainer e) { return e == Explainer::gradcam ? "gradcam" : "pv"; }

Explainer parse_explainer(const std::string& s) {
  if (s == "gradcam") return Explainer::gradcam;
  if (s == "pv") return Explainer::pv;
  throw ArgumentError("unknown explainer '" + s + "'");
}

json QuizQuestion::to_json() const {
  return {{"question_id", question_id},   {"sample_id", sample_id},     {"panel_digest", panel_digest},
          {"options", options},           {"model_prediction", model_prediction},
          {"truth_labels", truth_labels}, {"outcome", to_string(outcome)}};
}

QuizQuestion QuizQuestion::from_json(const json& j) {
  try {
    QuizQuestion q;
    q.question_id = j.at("question_id").get<std::string>();
    q.sample_id = j.at("sample_id").get<std::string>();
    q.panel_digest = j.value("panel_digest", "");
    q.options = j.at("options").get<std::vector<std::string>>();
    q.model_prediction = j.at("model_prediction").get<std::string>();
    q.truth_labels = j.value("truth_labels", std::vector<std::string>{});
    q.outcome = parse_outcome(j.at("outcome").get<std::string>());
    return q;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed quiz question: ") + e.what());
  }
}

std::vector<QuizQuestion> build_quiz(const OutcomePartition& partition, const std::vector<std::string>& class_names,
                                     int n_correct, int n_incorrect, unsigned long long seed) {
  if (n_correct < 0 || n_incorrect < 0) throw ArgumentError("question counts must be non-negative");
  if (class_names.size() < 4) throw ArgumentError("a quiz needs at least four classes to fill its options");
  const auto short_c = n_correct - static_cast<int>(partition.correct.size());
  const auto short_i = n_incorrect - static_cast<int>(partition.incorrect.size());
  if (short_c > 0 || short_i > 0) {
    std::string msg = "insufficient pool for quiz:";
    if (short_c > 0) msg += " short by " + std::to_string(short_c) + " correct samples (have " + std::to_string(partition.correct.size()) + ");";
    if (short_i > 0) msg += " short by " + std::to_string(short_i) + " incorrect samples (have " + std::to_string(partition.incorrect.size()) + ");";
    throw ArgumentError(msg);
  }
  std::mt19937_64 rng(seed);
  auto draw = [&](std::vector<std::string> pool, int n) {
    std::ranges::sort(pool);
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(static_cast<std::size_t>(n));
    return pool;
  };
  std::vector<std::string> picked = draw(partition.correct, n_correct);
  const auto incorrect = draw(partition.incorrect, n_incorrect);
  picked.insert(picked.end(), incorrect.begin(), incorrect.end());
  std::shuffle(picked.begin(), picked.end(), rng);

  std::vector<QuizQuestion> quiz;
  int number = 0;
  for (const auto& id : picked) {
    const EvaluatedSample* e = partition.find(id);
    if (!e) throw ArgumentError("partition lists '" + id + "' but has no evaluation for it");
    QuizQuestion q;
    char qid[16];
    std::snprintf(qid, sizeof qid, "q%02d", ++number);
    q.question_id = qid;
    q.sample_id = id;
    q.outcome = e->outcome;
    q.model_prediction = class_names.at(static_cast<std::size_t>(e->top_class));
    for (int t : e->targets) q.truth_labels.push_back(class_names.at(static_cast<std::size_t>(t)));

    std::vector<int> others;
    for (int t : e->targets)
      if (t != e->top_class) others.push_back(t);
    std::shuffle(others.begin(), others.end(), rng);
    if (others.size() > 3) others.resize(3);
    std::vector<int> pad;
    for (int c = 0; c < static_cast<int>(class_names.size()); ++c)
      if (c != e->top_class && std::ranges::find(others, c) == others.end() && !e->targets.contains(c)) pad.push_back(c);
    std::shuffle(pad.begin(), pad.end(), rng);
    for (std::size_t i = 0; others.size() < 3 && i < pad.size(); ++i) others.push_back(pad[i]);
    if (others.size() < 3) throw ArgumentError("not enough distinct classes to pad question " + q.question_id);

    q.options.push_back(q.model_prediction);
    for (int c : others) q.options.push_back(class_names[static_cast<std::size_t>(c)]);
    q.options.emplace_back(kCantTell);
    std::shuffle(q.options.begin(), q.options.end(), rng);
    quiz.push_back(std::move(q));
  }
  return quiz;
}

std::vector<QuizQuestion> quiz_variant(const std::vector<QuizQuestion>& quiz,
                                       const std::function<std::string(const QuizQuestion&)>& panel_digest) {
  std::vector<QuizQuestion> out = quiz;
  for (auto& q : out) q.panel_digest = panel_digest(q);
  return out;
}

std::vector<std::string> presented_options(const QuizQuestion& q, const std::string& user_id, unsigned long long seed) {
  const std::string h = sha256_hex(user_id + "\x1f" + q.question_id + "\x1f" + std::to_string(seed));
  std::mt19937_64 rng(std::stoull(h.substr(0, 16), nullptr, 16));
  auto opts = q.options;
  std::shuffle(opts.begin(), opts.end(), rng);
  return opts;
}

json QuizExport::to_json() const {
  json qs = json::array();
  for (const auto& q : questions) {
    json j = q.to_json();
    j.erase("panel_digest");
    qs.push_back(j);
  }
  json vs = json::object();
  for (const auto& [name, list] : variants) {
    json a = json::array();
    for (const auto& q : list)
      a.push_back({{"question_id", q.question_id}, {"panel_digest", q.panel_digest},
                   {"asset", "assets/" + q.panel_digest + ".png"}});
    vs[name] = a;
  }
  return {{"seed", seed}, {"questions", qs}, {"variants", vs}};
}

QuizExport QuizExport::from_json(const json& j) {
  QuizExport e;
  try {
    e.seed = j.value("seed", 0ULL);
    for (const auto& q : j.at("questions")) e.questions.push_back(QuizQuestion::from_json(q));
    const json variants = j.value("variants", json::object());
    for (const auto& [name, list] : variants.items()) {
      std::map<std::string, std::string> digests;
      for (const auto& v : list) digests[v.at("question_id").get<std::string>()] = v.at("panel_digest").get<std::string>();
      e.variants[name] = quiz_variant(e.questions, [&](const QuizQuestion& q) {
        const auto it = digests.find(q.question_id);
        return it == digests.end() ? std::string() : it->second;
      });
    }
  } catch (const json::exception& ex) {
    throw ValidationError(std::string("malformed quiz export: ") + ex.what());
  }
  return e;
}

QuizExport QuizExport::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("quiz file '" + path.string() + "' not found");
  const json j = json::parse(f, nullptr, false);
  if (j.is_discarded()) throw ValidationError("quiz file '" + path.string() + "' is not valid JSON");
  return from_json(j);
}

QuizBundle build_quiz_export(const ModelBundle& bundle, const Encoder& enc, const Decoder& dec,
                             const DatasetManifest& manifest, const OutcomePartition& partition, int n_correct,
                             int n_incorrect, unsigned long long seed, int panel_scale) {
  QuizBundle out;
  out.quiz.seed = seed;
  out.quiz.questions = build_quiz(partition, bundle.class_names(), n_correct, n_incorrect, seed);
  std::map<std::string, std::string> gradcam, pvs;
  const PanelOptions opts{panel_scale, bundle.class_names()};
  for (const auto& q : out.quiz.questions) {
    const ExplanationRecord r = explain_sample(bundle, enc, dec, manifest, q.sample_id, std::nullopt, partition.threshold);
    for (const auto& [variant, layout, sink] : {std::tuple{"gradcam", PanelLayout::overlay, &gradcam},
                                                std::tuple{"pv", PanelLayout::pv, &pvs}}) {
      std::string png = encode_png(render_panel(r, layout, opts));
      std::string digest = sha256_hex(png);
      (*sink)[q.question_id] = digest;
      out.assets.push_back({std::string(variant) + "/" + q.question_id, std::move(png), std::move(digest)});
    }
  }
  out.quiz.variants["gradcam"] = quiz_variant(out.quiz.questions, [&](const QuizQuestion& q) { return gradcam[q.question_id]; });
  out.quiz.variants["pv"] = quiz_variant(out.quiz.questions, [&](const QuizQuestion& q) { return pvs[q.question_id]; });
  return out;
}

namespace {
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}
}  // namespace

std::vector<Response> read_responses_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("responses file is empty");
  const auto header = split_csv_line(line);
  auto col = [&](const std::string& name) {
    auto it = std::ranges::find(header, name);
    if (it == header.end()) throw ValidationError("responses header lacks column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t cu = col("user_id"), cq = col("question_id"), co = col("chosen_option");
  std::vector<Response> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) throw ValidationError("responses line " + std::to_string(lineno) + " has the wrong field count");
    out.push_back({f[cu], f[cq], f[co]});
  }
  return out;
}

std::vector<Response> read_responses_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("responses file '" + path.string() + "' not found");
  return read_responses_csv(f);
}

double UserScore::accuracy(Outcome subset) const {
  if (subset == Outcome::correct) return correct_total ? static_cast<double>(correct_hits) / correct_total : 0.0;
  return incorrect_total ? static_cast<double>(incorrect_hits) / incorrect_total : 0.0;
}

json ScoreSummary::to_json() const {
  auto sub = [](const SubsetScore& s) {
    return json{{"hits", s.hits}, {"total", s.total}, {"accuracy", s.accuracy}, {"standard_error", s.standard_error}};
  };
  json users = json::array();
  for (const auto& u : per_user)
    users.push_back({{"user_id", u.user_id},
                     {"correct_hits", u.correct_hits},
                     {"correct_total", u.correct_total},
                     {"incorrect_hits", u.incorrect_hits},
                     {"incorrect_total", u.incorrect_total}});
  return {{"correct", sub(on_correct)}, {"incorrect", sub(on_incorrect)}, {"per_user", users}};
}

ScoreSummary score_responses(const std::vector<QuizQuestion>& quiz, const std::vector<Response>& responses) {
  std::map<std::string, const QuizQuestion*> by_id;
  for (const auto& q : quiz) by_id[q.question_id] = &q;
  std::map<std::string, UserScore> users;
  for (const auto& r : responses) {
    auto it = by_id.find(r.question_id);
    if (it == by_id.end()) throw ValidationError("response references unknown question '" + r.question_id + "'");
    const QuizQuestion& q = *it->second;
    if (std::ranges::find(q.options, r.chosen_option) == q.options.end())
      throw ValidationError("response '" + r.chosen_option + "' is not an option of " + q.question_id);
    UserScore& u = users[r.user_id];
    u.user_id = r.user_id;
    const bool hit = r.chosen_option == q.model_prediction;
    if (q.outcome == Outcome::correct) {
      ++u.correct_total;
      u.correct_hits += hit;
    } else if (q.outcome == Outcome::incorrect) {
      ++u.incorrect_total;
      u.incorrect_hits += hit;
    }
  }
  ScoreSummary s;
  for (auto& [id, u] : users) s.per_user.push_back(u);
  auto summarize = [&](Outcome subset) {
    SubsetScore out;
    std::vector<double> acc;
    for (const auto& u : s.per_user) {
      const int total = subset == Outcome::correct ? u.correct_total : u.incorrect_total;
      if (total == 0) continue;
      out.hits += subset == Outcome::correct ? u.correct_hits : u.incorrect_hits;
      out.total += total;
      acc.push_back(u.accuracy(subset));
    }
    out.accuracy = out.total ? static_cast<double>(out.hits) / out.total : 0.0;
    if (acc.size() > 1) {
      const double mean = std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
      double ss = 0.0;
      for (double a : acc) ss += (a - mean) * (a - mean);
      out.standard_error = std::sqrt(ss / static_cast<double>(acc.size() - 1)) / std::sqrt(static_cast<double>(acc.size()));
    }
    return out;
  };
  s.on_correct = summarize(Outcome::correct);
  s.on_incorrect = summarize(Outcome::incorrect);
  return s;
}

Tail parse_tail(const std::string& s) {
  if (s == "less") return Tail::less;
  if (s == "greater") return Tail::greater;
  if (s == "two_sided" || s == "two-sided") return Tail::two_sided;
  throw ArgumentError("unknown tail '" + s + "'");
}

MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b, Tail tail) {
  if (a.empty() || b.empty()) throw ArgumentError("mann_whitney_u: both samples must be non-empty");
  const double n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size()), n = n1 + n2;
  // Midranks of the pooled sample.
  std::vector<std::pair<double, int>> pooled;
  for (double v : a) pooled.emplace_back(v, 0);
  for (double v : b) pooled.emplace_back(v, 1);
  std::ranges::sort(pooled, {}, &std::pair<double, int>::first);
  double rank_sum_a = 0.0, tie_term = 0.0;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
    const double t = static_cast<double>(j - i);
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (pooled[k].second == 0) rank_sum_a += midrank;
    tie_term += t * t * t - t;
    i = j;
  }
  MannWhitneyResult r;
  r.u = rank_sum_a - n1 * (n1 + 1.0) / 2.0;
  const double var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  r.z = var > 0.0 ? (r.u - n1 * n2 / 2.0) / std::sqrt(var) : 0.0;
  const double cdf = 0.5 * std::erfc(-r.z / std::sqrt(2.0));
  switch (tail) {
    case Tail::less: r.p = cdf; break;
    case Tail::greater: r.p = 1.0 - cdf; break;
    case Tail::two_sided: r.p = std::min(1.0, 2.0 * std::min(cdf, 1.0 - cdf)); break;
  }
  return r;
}

json InvarianceReport::to_json() const {
  json samples = json::array();
  for (std::size_t i = 0; i < sample_ids.size(); ++i)
    samples.push_back({{"sample_id", sample_ids[i]},
                       {"ssim_ab", ssim_ab[i]},
                       {"mse_ab", mse_ab[i]},
                       {"ssim_a_untrained", ssim_a_untrained[i]},
                       {"mse_a_untrained", mse_a_untrained[i]},
                       {"ssim_b_untrained", ssim_b_untrained[i]},
                       {"mse_b_untrained", mse_b_untrained[i]}});
  return {{"summary",
           {{"mean_ssim_ab", mean_ssim_ab},
            {"mean_mse_ab", mean_mse_ab},
            {"mean_ssim_a_untrained", mean_ssim_a_untrained},
            {"mean_mse_a_untrained", mean_mse_a_untrained},
            {"mean_ssim_b_untrained", mean_ssim_b_untrained},
            {"mean_mse_b_untrained", mean_mse_b_untrained},
            {"count", sample_ids.size()}}},
          {"samples", samples}};
}

InvarianceReport decoder_invariance(const Decoder& a, const Decoder& b, const Decoder& untrained, const Encoder& enc,
                                    const ImageSet& eval_set, const SsimOptions& ssim) {
  for (const Decoder* d : {&a, &b, &untrained})
    if (d->config().latent != enc.latent_dims())
      throw ConfigError("decoder latent " + to_string(d->config().latent) + " does not match encoder latent " +
                        to_string(enc.latent_dims()));
  if (eval_set.size() == 0) throw ArgumentError("decoder_invariance: empty evaluation set");
  InvarianceReport r;
  auto pixel_mse = [](const Image& x, const Image& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x.data[i] - y.data[i]) * (x.data[i] - y.data[i]);
    return s / static_cast<double>(x.size());
  };
  constexpr int chunk = 64;
  for (int s = 0; s < eval_set.size(); s += chunk) {
    std::vector<int> idx(static_cast<std::size_t>(std::min(chunk, eval_set.size() - s)));
    std::iota(idx.begin(), idx.end(), s);
    const Tensor z = enc.forward(gather(eval_set.images, idx));
    const Tensor ya = a.reconstruct(z), yb = b.reconstruct(z), yu = untrained.reconstruct(z);
    for (int n = 0; n < z.batch; ++n) {
      const Image ia = to_image(ya, n), ib = to_image(yb, n), iu = to_image(yu, n);
      r.sample_ids.push_back(eval_set.ids[static_cast<std::size_t>(s + n)]);
      r.ssim_ab.push_back(ssim_rgb(ia, ib, ssim));
      r.mse_ab.push_back(pixel_mse(ia, ib));
      r.ssim_a_untrained.push_back(ssim_rgb(ia, iu, ssim));
      r.mse_a_untrained.push_back(pixel_mse(ia, iu));
      r.ssim_b_untrained.push_back(ssim_rgb(ib, iu, ssim));
      r.mse_b_untrained.push_back(pixel_mse(ib, iu));
    }
  }
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); };
  r.mean_ssim_ab = mean(r.ssim_ab);
  r.mean_mse_ab = mean(r.mse_ab);
  r.mean_ssim_a_untrained = mean(r.ssim_a_untrained);
  r.mean_mse_a_untrained = mean(r.mse_a_untrained);
  r.mean_ssim_b_untrained = mean(r.ssim_b_untrained);
  r.mean_mse_b_untrained = mean(r.mse_b_untrained);
  return r;
}

}  // namespace pv
