#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "oracles.hpp"
#include "stepsteer/error.hpp"
#include "stepsteer/extraction.hpp"

using namespace stepsteer;

namespace {

LabeledSample sample(const std::string& id, int first_error, int n_steps = 4) {
  LabeledSample s{id, "p", {}, first_error};
  for (int i = 0; i < n_steps; ++i) s.steps.push_back("step " + std::to_string(i));
  return s;
}

RolloutSet rollout_set(const LabeledSample& s, const std::vector<std::string>& texts) {
  RolloutSet set{s, {}};
  for (std::size_t r = 0; r < texts.size(); ++r) {
    Rollout ro{static_cast<int>(r), segment_trace(texts[r])};
    ro.trace.verdict = parse_verdict(texts[r]);
    set.rollouts.push_back(std::move(ro));
  }
  return set;
}

RolloutSet verdict_set(int first_error, const std::vector<Verdict>& verdicts) {
  RolloutSet set{sample("v", first_error, 6), {}};
  for (std::size_t r = 0; r < verdicts.size(); ++r) {
    Rollout ro{static_cast<int>(r), segment_trace("x")};
    ro.trace.verdict = verdicts[r];
    set.rollouts.push_back(std::move(ro));
  }
  return set;
}

// One record per delimiter of every rollout, value encodes (rollout, delimiter).
std::vector<StateRecord> records_for(const RolloutSet& set, int layer, std::size_t dim = 2) {
  std::vector<StateRecord> out;
  for (const auto& r : set.rollouts) {
    for (std::size_t d = 0; d < r.trace.delimiter_positions.size(); ++d) {
      StateRecord rec;
      rec.sample_id = set.sample.sample_id;
      rec.rollout_id = r.rollout_id;
      rec.token_position = static_cast<std::int64_t>(100 + 10 * d);
      rec.layer = layer;
      rec.vector = Vector(dim, 0.0);
      rec.vector[0] = r.rollout_id;
      rec.vector[1] = static_cast<double>(d) + 0.5 * layer;
      out.push_back(rec);
    }
  }
  return out;
}

CollectedState cs(Vector v, const std::string& id = "s", int rollout = 0) {
  CollectedState c;
  c.state.values = std::move(v);
  c.sample_id = id;
  c.rollout_id = rollout;
  return c;
}

}  // namespace

TEST(Filter, Examples) {
  EXPECT_TRUE(filter_contrastive_samples(verdict_set(2, {-1, 2, 5})));
  EXPECT_FALSE(filter_contrastive_samples(verdict_set(2, {-1, 5})));
  EXPECT_TRUE(filter_contrastive_samples(verdict_set(-1, {-1, -1, 4})));
  EXPECT_FALSE(filter_contrastive_samples(verdict_set(-1, {-1, -1})));
  EXPECT_FALSE(filter_contrastive_samples(verdict_set(2, {std::nullopt, 2})));
  EXPECT_FALSE(filter_contrastive_samples(verdict_set(-1, {})));
}

TEST(Filter, ExhaustiveTruthTable) {
  // Verdict alphabet: unparseable, -1, 0, 1, 2; multisets up to size 4.
  const std::vector<Verdict> alphabet{std::nullopt, -1, 0, 1, 2};
  std::vector<std::vector<Verdict>> multisets{{}};
  for (std::size_t size = 1; size <= 4; ++size) {
    std::vector<int> idx(size, 0);
    while (true) {
      std::vector<Verdict> m;
      for (int i : idx) m.push_back(alphabet[i]);
      multisets.push_back(m);
      int k = static_cast<int>(size) - 1;
      while (k >= 0 && idx[k] == static_cast<int>(alphabet.size()) - 1) --k;
      if (k < 0) break;
      ++idx[k];
      for (std::size_t j = k + 1; j < size; ++j) idx[j] = idx[k];
    }
  }
  EXPECT_EQ(multisets.size(), 1u + 5 + 15 + 35 + 70);
  for (int fe : {-1, 0, 1, 2}) {
    for (const auto& m : multisets) {
      bool acc = false, rej = false;
      for (const auto& v : m) {
        if (v == Verdict{-1}) acc = true;
        if (v && (fe >= 0 ? *v == fe : *v >= 0)) rej = true;
      }
      EXPECT_EQ(filter_contrastive_samples(verdict_set(fe, m)), acc && rej);
    }
  }
}

TEST(CollectStates, FalseAcceptanceAtFirstError) {
  const auto s = sample("e", 2);
  const auto set = rollout_set(s, {"Intro.\n\nParagraph 1: correct.\n\nParagraph 2 is correct.\n\n\\boxed{-1}"});
  const auto recs = records_for(set, 3);
  const StateIndex index(recs);
  CollectStats stats;
  const auto out = collect_states(set, index, 3, Role::FA, CueTable::defaults(), &stats);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].paragraph_index, 2u);
  EXPECT_EQ(out[0].delimiter_index, 1u);
  EXPECT_EQ(out[0].state.values, recs[1].vector);
  EXPECT_EQ(out[0].state.role, Role::FA);
  EXPECT_EQ(out[0].state.layer, 3);
  EXPECT_EQ(stats.collected, 1u);
}

TEST(CollectStates, ParagraphZeroSkipped) {
  const auto s = sample("e", 0);
  const auto set = rollout_set(s, {"Paragraph 0 is correct.\n\n\\boxed{-1}"});
  const StateIndex index(records_for(set, 0));
  CollectStats stats;
  EXPECT_TRUE(collect_states(set, index, 0, Role::FA, CueTable::defaults(), &stats).empty());
  EXPECT_EQ(stats.paragraph_zero, 1u);
}

TEST(CollectStates, AccumulatesAndCountsSkips) {
  const auto s = sample("e", 1);
  const auto set = rollout_set(
      s, {"A.\n\nParagraph 1: there is an error.\n\n\\boxed{1}",
          "A.\n\nB.\n\nParagraph 1 is wrong.\n\n\\boxed{1}",
          "A.\n\nParagraph 1: let me look for an error.\n\n\\boxed{1}",  // excluded cue
          "A.\n\nParagraph 1 is correct.\n\n\\boxed{-1}"});
  auto recs = records_for(set, 0);
  // Keep only rollout 1's first delimiter record. Records are ranked by
  // position, so the needed second delimiter is then missing.
  std::erase_if(recs, [](const StateRecord& r) { return r.rollout_id == 1 && r.token_position >= 110; });
  const StateIndex index(recs);
  CollectStats stats;
  const auto tr = collect_states(set, index, 0, Role::TR, CueTable::defaults(), &stats);
  ASSERT_EQ(tr.size(), 1u);
  EXPECT_EQ(tr[0].rollout_id, 0);
  EXPECT_EQ(stats.not_found, 1u);
  EXPECT_EQ(stats.missing_record, 1u);
  for (const auto& c : tr) EXPECT_EQ(c.verdict, Verdict{1});
  const auto fa = collect_states(set, index, 0, Role::FA, CueTable::defaults());
  ASSERT_EQ(fa.size(), 1u);
  EXPECT_EQ(fa[0].verdict, Verdict{-1});
}

TEST(CollectStates, CorrectSampleRoles) {
  const auto s = sample("c", -1);
  const auto set = rollout_set(s, {"A.\n\nParagraph 1: there is a mistake.\n\n\\boxed{1}",
                                   "A.\n\nB.\n\nParagraph 1 is correct.\n\n\\boxed{-1}",
                                   "A.\n\nParagraph 2: wrong.\n\n\\boxed{2}",
                                   "A.\n\nParagraph 1: wrong.\n\n\\boxed{1}"});
  EXPECT_EQ(lenient_reference_step(set), 1);
  const StateIndex index(records_for(set, 0));
  const auto fr = collect_states(set, index, 0, Role::FR, CueTable::defaults());
  EXPECT_EQ(fr.size(), 3u);
  const auto ta = collect_states(set, index, 0, Role::TA, CueTable::defaults());
  ASSERT_EQ(ta.size(), 1u);
  EXPECT_EQ(ta[0].rollout_id, 1);
  EXPECT_EQ(ta[0].delimiter_index, 1u);
  // Roles of the other class yield nothing on a correct sample.
  EXPECT_TRUE(collect_states(set, index, 0, Role::FA, CueTable::defaults()).empty());
  EXPECT_TRUE(collect_states(set, index, 0, Role::TR, CueTable::defaults()).empty());
}

TEST(LenientReferenceStep, TiesGoToSmallest) {
  EXPECT_EQ(lenient_reference_step(verdict_set(-1, {3, 1, -1, 3, 1})), 1);
  EXPECT_EQ(lenient_reference_step(verdict_set(-1, {-1, -1})), std::nullopt);
}

TEST(StateIndex, RanksByPosition) {
  std::vector<StateRecord> recs;
  for (std::int64_t pos : {50, 10, 30}) recs.push_back(StateRecord{"s", 0, pos, 1, std::nullopt, {double(pos)}});
  const StateIndex index(recs);
  EXPECT_EQ(index.size(), 3u);
  EXPECT_EQ(index.find("s", 0, 1, 0)->token_position, 10);
  EXPECT_EQ(index.find("s", 0, 1, 2)->token_position, 50);
  EXPECT_EQ(index.find("s", 0, 1, 3), nullptr);
  EXPECT_EQ(index.find("s", 1, 1, 0), nullptr);
}

TEST(AssembleRolloutSets, GroupsAndRejectsUnknown) {
  std::vector<LabeledSample> samples{sample("a", -1), sample("b", 1), sample("c", 0)};
  std::vector<RolloutRecord> rollouts{{"b", 0, "x \\boxed{1}", 1}, {"a", 0, "y", std::nullopt}, {"b", 1, "z", -1}};
  const auto sets = assemble_rollout_sets(samples, rollouts);
  ASSERT_EQ(sets.size(), 2u);
  EXPECT_EQ(sets[0].sample.sample_id, "a");
  EXPECT_EQ(sets[1].rollouts.size(), 2u);
  EXPECT_EQ(sets[1].rollouts[0].trace.verdict, Verdict{1});
  rollouts.push_back({"zzz", 0, "", std::nullopt});
  EXPECT_THROW(assemble_rollout_sets(samples, rollouts), Error);
  samples.push_back(sample("a", 0));
  EXPECT_THROW(assemble_rollout_sets(samples, {}), Error);
}

TEST(ContrastCorpus, AddSampleRetentionAndCounts) {
  const auto err = sample("e", 1);
  const auto set = rollout_set(err, {"A.\n\nParagraph 1 is correct.\n\n\\boxed{-1}",
                                     "A.\n\nParagraph 1 has an error.\n\n\\boxed{1}"});
  std::vector<StateRecord> recs = records_for(set, 0);
  const auto more = records_for(set, 2);
  recs.insert(recs.end(), more.begin(), more.end());
  const StateIndex index(recs);
  const std::vector<int> layers{0, 2};
  ContrastCorpus corpus;
  EXPECT_TRUE(corpus.add_sample(set, index, layers, CueTable::defaults()));
  EXPECT_EQ(corpus.retained_erroneous(), 1u);
  EXPECT_EQ(corpus.states(2, Role::TR).size(), 1u);
  EXPECT_EQ(corpus.states(2, Role::FA).size(), 1u);
  EXPECT_EQ(corpus.layers(), layers);

  const std::vector<int> missing_layer{0, 5};
  EXPECT_FALSE(corpus.add_sample(set, index, missing_layer, CueTable::defaults()));
  EXPECT_EQ(corpus.unlocalized(), 1u);

  const auto rejected = rollout_set(err, {"\\boxed{-1}", "\\boxed{3}"});
  EXPECT_FALSE(corpus.add_sample(rejected, index, layers, CueTable::defaults()));
  EXPECT_EQ(corpus.rejected_by_filter(), 1u);

  ContrastCorpus moved = std::move(corpus);
  EXPECT_EQ(moved.retained_erroneous(), 1u);
}

TEST(ContrastCorpus, ProvenanceConsistent) {
  const auto samples_per_class = 6;
  std::vector<RolloutSet> sets;
  std::vector<StateRecord> recs;
  for (int i = 0; i < samples_per_class; ++i) {
    const auto e = sample("e" + std::to_string(i), 1 + i % 3);
    const std::string step = std::to_string(e.first_error);
    sets.push_back(rollout_set(e, {"A.\n\nB.\n\nParagraph " + step + " is correct.\n\n\\boxed{-1}",
                                   "A.\n\nParagraph " + step + ": wrong.\n\n\\boxed{" + step + "}",
                                   "A.\n\nParagraph 0: wrong.\n\n\\boxed{0}"}));
    const auto r = records_for(sets.back(), 4);
    recs.insert(recs.end(), r.begin(), r.end());
  }
  const StateIndex index(recs);
  const std::vector<int> layers{4};
  const auto corpus = build_corpus(sets, index, layers, CueTable::defaults(), {4, 4});
  EXPECT_EQ(corpus.retained_erroneous(), 4u);
  std::map<std::string, int> truth;
  for (const auto& s : sets) truth[s.sample.sample_id] = s.sample.first_error;
  for (const auto& c : corpus.collected(4, Role::TR)) EXPECT_EQ(c.verdict, Verdict{truth.at(c.sample_id)});
  for (const auto& c : corpus.collected(4, Role::FA)) {
    EXPECT_EQ(c.verdict, Verdict{-1});
    EXPECT_GE(truth.at(c.sample_id), 0);
    EXPECT_GE(c.paragraph_index, 1u);
  }
}

TEST(ContrastCorpus, ConcurrentAddsMatchSerial) {
  std::vector<RolloutSet> sets;
  std::vector<StateRecord> recs;
  for (int i = 0; i < 40; ++i) {
    const auto e = sample("s" + std::to_string(i), i % 2 ? 1 : -1);
    if (e.first_error == 1) {
      sets.push_back(rollout_set(e, {"A.\n\nParagraph 1 is correct.\n\n\\boxed{-1}",
                                     "A.\n\nB.\n\nParagraph 1 has a flaw.\n\n\\boxed{1}"}));
    } else {
      sets.push_back(rollout_set(e, {"A.\n\nParagraph 2 is correct.\n\n\\boxed{-1}",
                                     "A.\n\nB.\n\nParagraph 2: mistake.\n\n\\boxed{2}"}));
    }
    auto r = records_for(sets.back(), 0, 3);
    for (auto& rec : r) rec.vector[2] = i;
    recs.insert(recs.end(), r.begin(), r.end());
  }
  const StateIndex index(recs);
  const std::vector<int> layers{0};
  ContrastCorpus serial, parallel;
  for (const auto& s : sets) serial.add_sample(s, index, layers, CueTable::defaults());
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (std::size_t i = t; i < sets.size(); i += 4) parallel.add_sample(sets[i], index, layers, CueTable::defaults());
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(serial.retained_correct(), 20u);
  EXPECT_EQ(serial.retained_erroneous(), 20u);
  const auto a = extract_direction_pair(serial, 0);
  const auto b = extract_direction_pair(parallel, 0);
  EXPECT_EQ(a.first.direction, b.first.direction);
  EXPECT_EQ(a.second.direction, b.second.direction);
}

TEST(ExtractDirectionPair, SingleElementSets) {
  ContrastCorpus c;
  c.insert(0, Role::TR, cs({1, 0}));
  c.insert(0, Role::FA, cs({0, 1}));
  c.insert(0, Role::TA, cs({2, 0}));
  c.insert(0, Role::FR, cs({0, 2}));
  const auto [strict, lenient] = extract_direction_pair(c, 0);
  EXPECT_EQ(strict.direction, (Vector{1, -1}));
  EXPECT_EQ(lenient.direction, (Vector{2, -2}));
  EXPECT_EQ(strict.kind, DirectionKind::Strict);
  EXPECT_EQ(lenient.kind, DirectionKind::Lenient);
  EXPECT_EQ(strict.layer, 0);
}

TEST(ExtractDirectionPair, IdenticalMeansGiveZeros) {
  ContrastCorpus c;
  for (Role r : {Role::TR, Role::FA, Role::TA, Role::FR}) {
    c.insert(1, r, cs({1, 1}, "a"));
    c.insert(1, r, cs({3, -1}, "b"));
  }
  const auto [strict, lenient] = extract_direction_pair(c, 1);
  EXPECT_EQ(strict.direction, (Vector{0, 0}));
  EXPECT_EQ(lenient.direction, (Vector{0, 0}));
}

TEST(ExtractDirectionPair, RandomSetsMatchOracle) {
  std::mt19937_64 rng(23);
  ContrastCorpus c;
  std::map<Role, std::vector<oracle::Vec>> raw;
  for (Role r : {Role::TR, Role::FA, Role::TA, Role::FR}) {
    for (int i = 0; i < 50; ++i) {
      raw[r].push_back(oracle::random_vector(rng, 16, 3.0));
      c.insert(7, r, cs(raw[r].back(), "s" + std::to_string(i)));
    }
  }
  const auto [strict, lenient] = extract_direction_pair(c, 7);
  const auto s_ref = oracle::mean_difference(raw[Role::TR], raw[Role::FA]);
  const auto l_ref = oracle::mean_difference(raw[Role::TA], raw[Role::FR]);
  for (std::size_t j = 0; j < 16; ++j) {
    EXPECT_NEAR(strict.direction[j], s_ref[j], 1e-12);
    EXPECT_NEAR(lenient.direction[j], l_ref[j], 1e-12);
  }
  EXPECT_EQ(strict.n_positive, 50u);
}

TEST(ExtractDirectionPair, EmptySetNamed) {
  ContrastCorpus c;
  c.insert(0, Role::FA, cs({0, 1}));
  c.insert(0, Role::TA, cs({2, 0}));
  c.insert(0, Role::FR, cs({0, 2}));
  try {
    extract_direction_pair(c, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyContrastSet);
    EXPECT_NE(e.detail().find("H_TR"), std::string::npos);
  }
  EXPECT_THROW(extract_direction(c, 9, DirectionKind::Lenient), Error);
}

TEST(SteeringVectorFile, RoundTripsExactly) {
  std::mt19937_64 rng(2);
  SteeringVector v{oracle::random_vector(rng, 33), DirectionKind::Lenient, 22, 17, 4};
  v.direction[0] = 0.1;
  v.direction[1] = 1.0 / 3.0;
  const auto dir = oracle::temp_dir("vec");
  const auto path = dir / steering_vector_filename(v.kind, v.layer);
  EXPECT_EQ(path.filename(), "lenient_L22.json");
  save_steering_vector(v, path, Json{{"seed", 1}});
  const auto back = load_steering_vector(path);
  EXPECT_EQ(back.direction, v.direction);
  EXPECT_EQ(back.kind, v.kind);
  EXPECT_EQ(back.layer, 22);
  EXPECT_EQ(back.n_positive, 17u);
  EXPECT_EQ(back.n_negative, 4u);

  Json bad = steering_vector_to_json(v);
  bad["kind"] = "sideways";
  EXPECT_THROW(steering_vector_from_json(bad), Error);
  bad = steering_vector_to_json(v);
  bad["direction"] = Json::array();
  EXPECT_THROW(steering_vector_from_json(bad), Error);
  std::filesystem::remove_all(dir);
}
