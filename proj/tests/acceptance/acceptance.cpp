// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "stepsteer/error.hpp"
#include "stepsteer/eval.hpp"
#include "stepsteer/extraction.hpp"
#include "stepsteer/intervention.hpp"
#include "stepsteer/layer_select.hpp"
#include "stepsteer/probe.hpp"
#include "stepsteer/record.hpp"
#include "stepsteer/steer.hpp"
#include "stepsteer/synthetic.hpp"
#include "stepsteer/trace.hpp"

using namespace stepsteer;

namespace {

struct Result {
  bool pass = true;
  std::string detail;
};

// Collects the first few failure messages of a criterion.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (ok) return;
    ++failures_;
    if (failures_ <= 3) notes_ += (notes_.empty() ? "" : "; ") + what;
  }
  Result done(const std::string& summary) const {
    if (failures_ == 0) return {true, summary + " (" + std::to_string(checks_) + " checks)"};
    return {false, std::to_string(failures_) + "/" + std::to_string(checks_) + " failed: " + notes_};
  }

 private:
  std::size_t checks_ = 0, failures_ = 0;
  std::string notes_;
};

std::string fmt(double x, int precision = 6) {
  std::ostringstream os;
  os.precision(precision);
  os << x;
  return os.str();
}

bool same_bits(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// ------------------------------------------------------------------ 1

Result f1_table_consistency() {
  Check c;
  auto run = [&](std::size_t tr, std::size_t ta, double expected) {
    std::vector<std::pair<Verdict, int>> r;
    for (std::size_t i = 0; i < 1000; ++i) r.emplace_back(i < tr ? Verdict{3} : Verdict{-1}, 3);
    for (std::size_t i = 0; i < 1000; ++i) r.emplace_back(i < ta ? Verdict{-1} : Verdict{1}, -1);
    const auto m = compute_metrics(r);
    c.expect(m.f1 && std::abs(*m.f1 - expected) <= 0.05,
             "F1 " + (m.f1 ? fmt(*m.f1) : "NA") + " vs " + fmt(expected));
    c.expect(std::abs(harmonic_f1(tr / 10.0, ta / 10.0) - expected) <= 0.05, "harmonic_f1");
  };
  run(179, 964, 30.2);
  run(546, 964, 69.7);
  return c.done("F1(17.9,96.4)=30.2, F1(54.6,96.4)=69.7");
}

// ------------------------------------------------------------------ 2

Result steer_properties() {
  Check c;
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> dim_dist(2, 512);
  std::uniform_real_distribution<double> alpha_dist(0.0, 8.0), scale_dist(0.01, 100.0);
  double worst = 0.0;
  for (int t = 0; t < 10000; ++t) {
    const std::size_t dim = dim_dist(rng);
    const auto h = oracle::random_vector(rng, dim, scale_dist(rng));
    const auto d = oracle::random_vector(rng, dim, scale_dist(rng));
    const double alpha = alpha_dist(rng);
    Vector out;
    try {
      out = apply_steer(h, d, alpha);
    } catch (const Error& e) {
      c.expect(false, std::string("unexpected ") + e.what());
      continue;
    }
    const double rel = static_cast<double>(std::abs(oracle::norm(out) - oracle::norm(h)) / oracle::norm(h));
    worst = std::max(worst, rel);
    c.expect(rel <= 1e-6, "norm drift " + fmt(rel) + " at dim " + std::to_string(dim));
    c.expect(same_bits(apply_steer(h, d, 0.0), h), "alpha=0 not identity");
    Vector parallel(h);
    const double k = scale_dist(rng);
    for (double& x : parallel) x *= k;
    c.expect(same_bits(apply_steer(h, parallel, alpha), h), "parallel d not identity");
  }
  return c.done("10000 triples, dims 2-512, worst relative norm error " + fmt(worst, 3));
}

// ------------------------------------------------------------------ 3

Result gate_grid() {
  Check c;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> alpha_dist(0.5, 4.0);
  std::size_t steered = 0, kept = 0;
  for (double rho : {-1.0, 0.0, 0.1, 0.4, 0.6, 1.0}) {
    for (int t = 0; t < 2000; ++t) {
      const std::size_t dim = 2 + rng() % 63;
      const auto h = oracle::random_vector(rng, dim);
      auto d = oracle::random_vector(rng, dim);
      // Bias a third of the directions towards h so high cosines occur.
      if (t % 3 == 0) {
        for (std::size_t i = 0; i < dim; ++i) d[i] += 3.0 * h[i];
      }
      const double alpha = alpha_dist(rng);
      const double cos = oracle::cosine(h, d);
      if (std::abs(cos - rho) < 1e-12) continue;
      const Vector out = gated_steer(h, d, alpha, rho);
      if (cos >= rho) {
        ++kept;
        c.expect(same_bits(out, h), "closed gate changed h at rho " + fmt(rho));
      } else {
        ++steered;
        c.expect(same_bits(out, apply_steer(h, d, alpha)), "open gate differs from apply_steer at rho " + fmt(rho));
      }
    }
  }
  c.expect(steered > 0 && kept > 0, "grid did not exercise both branches");
  return c.done(std::to_string(steered) + " steered, " + std::to_string(kept) + " unchanged");
}

// ------------------------------------------------------------------ 4

Result routing_grid() {
  Check c;
  std::size_t cases = 0;
  for (auto [tl, th] : {std::pair{0.5, 0.7}, std::pair{0.6, 0.7}}) {
    for (Variant v : {Variant::None, Variant::Uni, Variant::Bi, Variant::UniformCAA}) {
      SteerPolicy p;
      p.variant = v;
      p.tau_low = tl;
      p.tau_high = th;
      p.layers = {0};
      for (int k = 0; k <= 100; ++k) {
        const double q = k / 100.0;
        Direction expected = Direction::None;
        if (v == Variant::UniformCAA) expected = Direction::Strict;
        if (v == Variant::Uni && q <= tl) expected = Direction::Strict;
        if (v == Variant::Bi) {
          if (q <= tl) expected = Direction::Strict;
          else if (q >= th) expected = Direction::Lenient;
        }
        const Direction got = route(q, p);
        c.expect(got == expected, std::string(to_string(v)) + " q=" + fmt(q) + " gave " + std::string(to_string(got)));
        if (v == Variant::Uni) c.expect(got != Direction::Lenient, "Uni selected lenient");
        ++cases;
      }
    }
  }
  return c.done(std::to_string(cases) + " (q, thresholds, variant) cases");
}

// ------------------------------------------------------------------ 5

Result mean_difference_oracle() {
  Check c;
  std::mt19937_64 rng(55);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t dim = 1 + rng() % 64;
    const std::size_t np = 1 + rng() % 40, nn = 1 + rng() % 40;
    const int layer = static_cast<int>(rng() % 8);
    std::vector<oracle::Vec> pos, neg;
    ContrastCorpus corpus;
    const Role roles[2][2] = {{Role::TR, Role::FA}, {Role::TA, Role::FR}};
    for (int kind = 0; kind < 2; ++kind) {
      pos.clear();
      neg.clear();
      for (std::size_t i = 0; i < np; ++i) pos.push_back(oracle::random_vector(rng, dim, 1.0 + t));
      for (std::size_t i = 0; i < nn; ++i) neg.push_back(oracle::random_vector(rng, dim, 1.0 + t));
      std::vector<HiddenState> hp, hn;
      for (std::size_t i = 0; i < np; ++i) {
        hp.push_back(HiddenState{layer, static_cast<std::int64_t>(i), pos[i]});
        CollectedState cs;
        cs.state = hp.back();
        cs.sample_id = "p" + std::to_string(i);
        corpus.insert(layer, roles[kind][0], cs);
      }
      for (std::size_t i = 0; i < nn; ++i) {
        hn.push_back(HiddenState{layer, static_cast<std::int64_t>(i), neg[i]});
        CollectedState cs;
        cs.state = hn.back();
        cs.sample_id = "n" + std::to_string(i);
        corpus.insert(layer, roles[kind][1], cs);
      }
      const auto expected = oracle::mean_difference(pos, neg);
      const DirectionKind dk = kind == 0 ? DirectionKind::Strict : DirectionKind::Lenient;
      const auto v = build_steering_vector(hp, hn, dk);
      const auto from_corpus = extract_direction(corpus, layer, dk);
      for (std::size_t j = 0; j < dim; ++j) {
        const double scale = std::max(1.0, std::abs(expected[j]));
        const double e1 = std::abs(v.direction[j] - expected[j]) / scale;
        const double e2 = std::abs(from_corpus.direction[j] - expected[j]) / scale;
        worst = std::max({worst, e1, e2});
        c.expect(e1 <= 1e-12 && e2 <= 1e-12, "coordinate error " + fmt(std::max(e1, e2)));
      }
      c.expect(v.n_positive == np && v.n_negative == nn, "set sizes");
    }
  }
  return c.done("100 corpora, worst error " + fmt(worst, 3));
}

// ------------------------------------------------------------------ 6

Result retention_truth_table() {
  Check c;
  const std::vector<Verdict> alphabet{std::nullopt, -1, 0, 1, 2, 3};
  std::vector<std::vector<Verdict>> multisets{{}};
  for (std::size_t size = 1; size <= 4; ++size) {
    std::vector<std::size_t> idx(size, 0);
    while (true) {
      std::vector<Verdict> m;
      for (auto i : idx) m.push_back(alphabet[i]);
      multisets.push_back(m);
      int k = static_cast<int>(size) - 1;
      while (k >= 0 && idx[k] == alphabet.size() - 1) --k;
      if (k < 0) break;
      ++idx[k];
      for (std::size_t j = k + 1; j < size; ++j) idx[j] = idx[k];
    }
  }
  std::size_t cases = 0;
  for (int first_error : {0, 1, 2, 3}) {
    for (const auto& m : multisets) {
      RolloutSet set{LabeledSample{"s", "p", {"a", "b", "c", "d"}, first_error}, {}};
      bool accepts = false, names_error = false;
      for (std::size_t r = 0; r < m.size(); ++r) {
        Rollout ro{static_cast<int>(r), segment_trace("x")};
        ro.trace.verdict = m[r];
        set.rollouts.push_back(ro);
        if (m[r] == Verdict{-1}) accepts = true;
        if (m[r] == Verdict{first_error}) names_error = true;
      }
      c.expect(filter_contrastive_samples(set) == (accepts && names_error), "pattern mismatch");
      ++cases;
    }
  }
  return c.done(std::to_string(multisets.size()) + " multisets x 4 error steps = " + std::to_string(cases) +
                " cases");
}

// ------------------------------------------------------------------ 7

Result cue_golden_corpus() {
  // A = acceptance under the acceptance rule, R = rejection under the
  // rejection rule, '-' = ambiguous.
  struct Row {
    const char* text;
    char acceptance;
    char rejection;
  };
  const Row golden[] = {
      {"Paragraph 2: This step is correct.", 'A', '-'},
      {"Paragraph 3 looks okay.", 'A', '-'},
      {"There is no error in paragraph 1.", 'A', '-'},
      {"Paragraph 4 is incorrect.", '-', 'R'},
      {"The correct value should be 12, so paragraph 2 has an error.", '-', 'R'},
      {"This is not correct.", '-', 'R'},
      {"This is **not** correct.", '-', '-'},
      {"Let me check paragraph 3 again; it seems correct.", '-', '-'},
      {"Let's verify: the sum is okay.", '-', '-'},
      {"Paragraph 5 contains a mistake in the sign.", '-', 'R'},
      {"There is an issue with the units.", '-', 'R'},
      {"A subtle flaw appears in the argument.", '-', 'R'},
      {"I see an inconsistency between steps.", '-', 'R'},
      {"The final answer is wrong.", '-', 'R'},
      {"I cannot find any error here.", '-', '-'},
      {"Is there any explicit error? No.", '-', '-'},
      {"I do not see any immediate error.", '-', '-'},
      {"There is not any mathematical error.", '-', '-'},
      {"There is no immediate error in this step.", '-', '-'},
      {"There is no mathematical error.", '-', '-'},
      {"The step is logically correct, apart from a notation issue.", 'A', '-'},
      {"The computation is mathematically correct; the earlier error was fixed.", 'A', '-'},
      {"This is not a mathematical error, only a typo.", '-', '-'},
      {"The paragraph does not contain an error.", '-', '-'},
      {"Yes, correct. The error in paragraph 1 does not propagate.", 'A', '-'},
      {"Okay, but there is a mistake in the sign.", 'A', 'R'},
      {"PARAGRAPH 3 IS INCORRECT.", '-', 'R'},
      {"Let me recheck: there is a mistake.", '-', '-'},
      {"Let's see, the sign is wrong.", '-', '-'},
      {"We compute 3 + 4 = 7.", '-', '-'},
      {"Everything here is fine.", '-', '-'},
      {"There are errors in the exponent.", '-', 'R'},
      {"This is correct. No error.", 'A', '-'},
      {"The claim that x is correct is incorrect.", '-', 'R'},
      {"Any error here would change the result, and it is wrong.", '-', '-'},
      {"it's OK", '-', '-'},
  };
  Check c;
  const auto cues = CueTable::defaults();
  for (const auto& row : golden) {
    const auto a = classify_paragraph(row.text, CueClass::Acceptance, cues);
    const auto r = classify_paragraph(row.text, CueClass::Rejection, cues);
    c.expect((a == ParagraphClass::Acceptance) == (row.acceptance == 'A'),
             std::string("acceptance rule on \"") + row.text + "\"");
    c.expect((r == ParagraphClass::Rejection) == (row.rejection == 'R'),
             std::string("rejection rule on \"") + row.text + "\"");
  }
  return c.done(std::to_string(std::size(golden)) + " golden paragraphs");
}

// ------------------------------------------------------------------ 8

std::vector<LabeledVector> clusters(std::size_t n, std::size_t dim, double separation, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<LabeledVector> out;
  for (std::size_t i = 0; i < n; ++i) {
    LabeledVector lv{oracle::random_vector(rng, dim), static_cast<int>(i % 2)};
    lv.x[0] += (lv.label ? 0.5 : -0.5) * separation;
    out.push_back(std::move(lv));
  }
  return out;
}

std::vector<double> flatten(const ProbeWeights& w) {
  std::vector<double> out;
  for (const auto& l : w.layers) {
    out.insert(out.end(), l.weight.begin(), l.weight.end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

Result probe_checks() {
  Check c;
  // Gradient check.
  auto w = ProbeWeights::initialize(5, {7, 6}, 3);
  std::mt19937_64 rng(9);
  std::vector<LabeledVector> batch;
  for (int i = 0; i < 4; ++i) batch.push_back({oracle::random_vector(rng, 5), i % 2});
  ProbeWeights grads;
  probe_loss(w, batch, &grads);
  const auto analytic = flatten(grads);
  std::vector<double> numeric;
  const double h = 1e-6;
  for (auto& layer : w.layers) {
    for (auto* params : {&layer.weight, &layer.bias}) {
      for (double& p : *params) {
        const double keep = p;
        p = keep + h;
        const double up = probe_loss(w, batch);
        p = keep - h;
        const double down = probe_loss(w, batch);
        p = keep;
        numeric.push_back((up - down) / (2 * h));
      }
    }
  }
  double worst_grad = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-6});
    worst_grad = std::max(worst_grad, std::abs(analytic[i] - numeric[i]) / scale);
  }
  c.expect(worst_grad <= 1e-4, "gradient error " + fmt(worst_grad));

  // Held-out AUC with the default hyperparameters.
  const auto train = clusters(200, 2, 6.0, 1);
  const auto test = clusters(200, 2, 6.0, 2);
  ProbeTrainConfig cfg;
  const auto a = train_probe(train, {}, cfg);
  const auto b = train_probe(train, {}, cfg);
  c.expect(a.log.epochs_run <= 300, "more than 300 epochs");
  c.expect(same_bits(flatten(a.weights), flatten(b.weights)), "weights differ across reruns");
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& t : test) {
    scores.push_back(probe_forward(t.x, a.weights));
    labels.push_back(t.label);
  }
  const double held_out = auc(scores, labels);
  c.expect(held_out >= 0.95, "held-out AUC " + fmt(held_out));
  return c.done("gradient error " + fmt(worst_grad, 3) + ", held-out AUC " + fmt(held_out, 4) + ", " +
                std::to_string(a.log.epochs_run) + " epochs, bit-identical rerun");
}

// ------------------------------------------------------------------ 9

Result layer_selection() {
  Check c;
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    const int special = static_cast<int>(seed % 6);
    std::vector<LayerScore> scores;
    for (int layer = 0; layer < 6; ++layer) {
      std::vector<LabeledVector> train, val;
      for (int i = 0; i < 200; ++i) {
        LabeledVector lv{oracle::random_vector(rng, 16), i % 2};
        if (layer == special) lv.x[3] += lv.label ? 2.5 : -2.5;
        (i < 140 ? train : val).push_back(lv);
      }
      scores.push_back(score_layer(layer, train, val));
    }
    if (rank_layers(scores, 6).front().layer == special) ++hits;
  }
  c.expect(hits == 20, std::to_string(hits) + "/20 trials ranked the separable layer first");

  std::mt19937_64 rng(77);
  double worst = 0.0;
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 2 + rng() % 200;
    std::vector<double> s(n);
    std::vector<int> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = (t % 2) ? static_cast<double>(rng() % 7) : std::ldexp(static_cast<double>(rng() >> 11), -53);
      l[i] = static_cast<int>(rng() % 2);
    }
    l[0] = 0;
    l[1] = 1;
    const double diff = std::abs(auc(s, l) - oracle::pairwise_auc(s, l));
    worst = std::max(worst, diff);
    c.expect(diff <= 1e-12, "auc differs from pairwise oracle by " + fmt(diff));
  }
  return c.done(std::to_string(hits) + "/20 separable layer first; auc oracle worst " + fmt(worst, 3));
}

// ------------------------------------------------------------------ 10

struct ToyFixture {
  ToyModel model;
  std::vector<LabeledSample> samples;
  SteeringSet vectors;
  ProbeFile probe;
  std::vector<int> layers;
  std::string notes;
};

ToyFixture build_toy_fixture() {
  ToyFixture f{ToyModel(ToyConfig{}), make_synthetic_samples(40, 17), {}, {}, {1, 2}, {}};
  RecordOptions ro;
  ro.n_rollouts = 8;
  ro.temperature = 1.0;
  ro.top_p = 1.0;
  ro.seed = 3;
  ro.tap_layers = f.layers;
  const auto rec = record_rollouts(f.samples, f.model, ro);
  const auto sets = assemble_rollout_sets(f.samples, rec.rollouts);
  const StateIndex index(flatten_events(rec.events));
  const auto corpus = build_corpus(sets, index, f.layers, CueTable::defaults());
  for (int l : f.layers) {
    auto [strict, lenient] = extract_direction_pair(corpus, l);
    f.vectors.add(strict);
    f.vectors.add(lenient);
  }
  f.notes = std::to_string(rec.rollouts.size()) + " rollouts, " + std::to_string(corpus.retained_erroneous()) +
            "+" + std::to_string(corpus.retained_correct()) + " retained samples";

  // Correctness probe on mean-pooled prompt states of layer 2.
  std::vector<LabeledVector> data;
  const int probe_layer = 2;
  for (const auto& s : f.samples) {
    const auto states =
        f.model.prompt_states(f.model.tokenize(render_prompt(PromptKind::Basic, s).flattened()),
                              std::span<const int>(&probe_layer, 1));
    data.push_back({pool(std::span<const Vector>(states.at(probe_layer)), Pooling::Mean), s.fully_correct() ? 1 : 0});
  }
  ProbeTrainConfig pc;
  pc.hidden = {16, 16};
  pc.max_epochs = 30;
  pc.learning_rate = 1e-3;
  f.probe = ProbeFile{train_probe(data, {}, pc).weights, Pooling::Mean, probe_layer, Json::object()};
  return f;
}

EvalOptions base_options(const ToyFixture& f, Variant v) {
  EvalOptions o;
  o.policy.variant = v;
  o.policy.layers = f.layers;
  o.policy.alpha_strict = 2.0;
  o.policy.alpha_lenient = 2.0;
  o.vectors = f.vectors;
  o.probe = f.probe;
  o.temperature = 0.7;
  o.top_p = 0.9;
  o.seed = 21;
  o.max_tokens = 64;
  return o;
}

std::vector<std::string> texts_of(const EvalReport& r) {
  std::vector<std::string> out;
  for (const auto& row : r.rows) out.insert(out.end(), row.texts.begin(), row.texts.end());
  return out;
}

Result toy_end_to_end(const ToyFixture& f) {
  Check c;
  const auto baseline = run_eval(f.samples, base_options(f, Variant::None), f.model);
  c.expect(baseline.total_interventions == 0, "variant none intervened");

  std::size_t caa_delims = 0, caa_steps = 0;
  for (Variant v : {Variant::UniformCAA, Variant::Uni, Variant::Bi}) {
    auto o = base_options(f, v);
    o.policy.alpha_strict = 0.0;
    o.policy.alpha_lenient = 0.0;
    c.expect(texts_of(run_eval(f.samples, o, f.model)) == texts_of(baseline),
             std::string(to_string(v)) + " with alpha 0 diverged from baseline");
    o = base_options(f, v);
    const auto steered = run_eval(f.samples, o, f.model);
    c.expect(steered.rows.size() == f.samples.size(), "row count");
    if (v == Variant::UniformCAA) {
      caa_delims = steered.total_delimiters;
      caa_steps = steered.total_interventions;
      c.expect(caa_steps == caa_delims, "CAA interventions " + std::to_string(caa_steps) + " != delimiters " +
                                            std::to_string(caa_delims));
      c.expect(caa_delims > 0, "no delimiters generated");
    }
  }
  c.expect(texts_of(run_eval(f.samples, base_options(f, Variant::None), f.model)) == texts_of(baseline),
           "variant none not reproducible");

  // Post-delimiter next-token distribution with and without steering, on the
  // same token prefix up to the first delimiter.
  std::size_t changed = 0;
  double max_tv = 0.0;
  SteerPolicy policy = base_options(f, Variant::UniformCAA).policy;
  for (const auto& s : f.samples) {
    const auto prompt = f.model.tokenize(render_prompt(PromptKind::Basic, s).flattened());
    GenerateOptions g;
    g.max_tokens = 64;
    g.tap_layers = f.layers;
    const auto plain = f.model.generate(prompt, g);
    DelimiterSteerer steerer(policy, f.vectors, Direction::Strict);
    const auto steered = f.model.generate(prompt, g, std::ref(steerer));
    if (plain.delimiter_next_probs.empty() || steered.delimiter_next_probs.empty()) continue;
    const auto& p = plain.delimiter_next_probs.front();
    const auto& q = steered.delimiter_next_probs.front();
    double tv = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) tv += 0.5 * std::abs(p[i] - q[i]);
    max_tv = std::max(max_tv, tv);
    if (tv > 0.0) ++changed;
  }
  c.expect(changed >= 1, "no sample's post-delimiter distribution changed");
  return c.done(f.notes + "; CAA " + std::to_string(caa_steps) + "/" + std::to_string(caa_delims) +
                " delimiters steered; " + std::to_string(changed) + " samples with TV>0, max TV " +
                fmt(max_tv, 3));
}

// ------------------------------------------------------------------ 11

Result flops_checks(const ToyFixture& f) {
  Check c;
  std::mt19937_64 rng(11);
  for (int t = 0; t < 1000; ++t) {
    const std::uint64_t m = rng() >> 34, tok = rng() >> 34;
    const unsigned __int128 expected = static_cast<unsigned __int128>(2) * m * tok;
    c.expect(estimate_flops(m, tok).flops() == static_cast<std::uint64_t>(expected), "2MT mismatch");
  }
  auto o = base_options(f, Variant::None);
  o.n_consistency = 4;
  const auto multi = run_eval(f.samples, o, f.model);
  std::uint64_t summed = 0;
  for (std::uint64_t r = 0; r < 4; ++r) {
    auto single = base_options(f, Variant::None);
    single.seed = o.seed + r;
    summed += run_eval(f.samples, single, f.model).flops.inference_tokens;
  }
  c.expect(multi.flops.inference_tokens == summed, "N=4 tokens " + std::to_string(multi.flops.inference_tokens) +
                                                      " vs summed " + std::to_string(summed));
  c.expect(multi.flops.flops() == 2 * f.model.descriptor().active_params * summed, "N=4 FLOPs");
  return c.done("N=4 run costs " + std::to_string(multi.flops.inference_tokens) + " tokens = sum of 4 single runs");
}

// ------------------------------------------------------------------ 12

Result ablation_equivalences(const ToyFixture& f) {
  Check c;
  std::size_t steered_forced = 0, steered_ungated = 0;
  for (Variant v : {Variant::Uni, Variant::Bi}) {
    // A permissive gate so the routed direction actually steers tokens.
    auto ablated = base_options(f, v);
    ablated.policy.sample_adaptive = false;
    ablated.policy.rho_strict = ablated.policy.rho_lenient = 0.9;
    auto forced = base_options(f, Variant::Uni);
    forced.policy.tau_low = 1.0;
    forced.policy.rho_strict = forced.policy.rho_lenient = 0.9;
    const auto a = run_eval(f.samples, ablated, f.model);
    const auto b = run_eval(f.samples, forced, f.model);
    c.expect(texts_of(a) == texts_of(b), std::string(to_string(v)) + ": no-sample-adaptive != forced strict");
    for (const auto& row : a.rows) c.expect(row.direction == Direction::Strict, "ablated routing not strict");
    steered_forced += a.total_interventions;

    // Thresholds at the probe-score tertiles, so samples reach both
    // directions and the gate is what differs.
    std::vector<double> qs;
    for (const auto& row : a.rows) qs.push_back(*row.q);
    std::sort(qs.begin(), qs.end());
    auto tertiles = [&](EvalOptions o) {
      o.policy.tau_low = qs[qs.size() / 3];
      o.policy.tau_high = std::max(qs[2 * qs.size() / 3], std::nextafter(o.policy.tau_low, 2.0));
      return o;
    };
    auto ungated = tertiles(base_options(f, v));
    ungated.policy.delimiter_adaptive = false;
    auto rho_one = tertiles(base_options(f, v));
    rho_one.policy.rho_strict = 1.0;
    rho_one.policy.rho_lenient = 1.0;
    const auto u = run_eval(f.samples, ungated, f.model);
    const auto r = run_eval(f.samples, rho_one, f.model);
    c.expect(texts_of(u) == texts_of(r), std::string(to_string(v)) + ": no-delimiter-adaptive != rho=+1");
    c.expect(u.total_interventions == r.total_interventions, "intervention counts differ");
    steered_ungated += u.total_interventions;
  }
  c.expect(steered_forced > 0, "forced-strict runs never steered");
  c.expect(steered_ungated > 0, "ungated runs never steered");
  return c.done("outputs equal under fixed seeds; " + std::to_string(steered_forced) + " and " +
                std::to_string(steered_ungated) + " interventions");
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](int id, const char* name, const std::function<Result()>& fn) {
    const auto start = std::chrono::steady_clock::now();
    Result o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failed;
    std::printf("%s criterion %d: %s - %s [%.2fs]\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs);
    std::fflush(stdout);
  };

  report(1, "F1 from table rates", f1_table_consistency);
  report(2, "norm-preserving steer", steer_properties);
  report(3, "cosine gate", gate_grid);
  report(4, "probe-score routing", routing_grid);
  report(5, "mean-difference vectors", mean_difference_oracle);
  report(6, "retention filter", retention_truth_table);
  report(7, "cue classifier", cue_golden_corpus);
  report(8, "correctness probe", probe_checks);
  report(9, "layer selection", layer_selection);

  std::optional<ToyFixture> fixture;
  std::string fixture_error;
  try {
    fixture = build_toy_fixture();
  } catch (const std::exception& e) {
    fixture_error = e.what();
  }
  auto with_fixture = [&](Result (*fn)(const ToyFixture&)) {
    return [&, fn]() -> Result {
      if (!fixture) return {false, "toy fixture failed: " + fixture_error};
      return fn(*fixture);
    };
  };
  report(10, "toy end-to-end", with_fixture(toy_end_to_end));
  report(11, "FLOPs accounting", with_fixture(flops_checks));
  report(12, "ablation equivalences", with_fixture(ablation_equivalences));

  std::printf("%d of 12 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
