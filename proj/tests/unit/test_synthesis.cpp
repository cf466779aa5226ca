#include "demoe/io.hpp"
#include "demoe/synthesis.hpp"

#include "support/fixtures.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace demoe;

namespace {

// Every combination of the two-category schema, undisclosed included: 9 personas.
std::vector<AnnotatorProfile> all_combination_profiles()
{
  std::vector<AnnotatorProfile> out;
  int i = 0;
  for (const char* g : {"a", "b", "undisclosed"})
    for (const char* n : {"x", "y", "undisclosed"}) {
      AnnotatorProfile p{"h" + std::to_string(i++), {}};
      if (std::string(g) != "undisclosed") p.attributes["group"] = g;
      if (std::string(n) != "undisclosed") p.attributes["noise"] = n;
      out.push_back(p);
    }
  return out;
}

std::vector<AnnotationRecord> counts_corpus(const std::vector<std::pair<std::string, std::size_t>>& per_instance,
                                            const std::vector<AnnotatorProfile>& profiles)
{
  std::vector<AnnotationRecord> out;
  for (const auto& [id, n] : per_instance)
    for (std::size_t a = 0; a < n; ++a) out.push_back({id, profiles[a % profiles.size()].annotator_id, 3, false, {}});
  return out;
}

const PlanEntry& entry(const GenerationPlan& plan, const std::string& id)
{
  for (const auto& e : plan.entries)
    if (e.instance_id == id) return e;
  throw std::out_of_range(id);
}

RetryPolicy no_sleep(std::size_t attempts = 3)
{
  RetryPolicy r;
  r.max_attempts = attempts;
  r.sleep = [](std::chrono::milliseconds) {};
  return r;
}

struct GenerationFixture {
  CorpusSchema schema = demoe::testing::two_category_schema();
  std::vector<AnnotatorProfile> profiles = all_combination_profiles();
  std::vector<Persona> pool = build_persona_pool(profiles, schema);
  std::map<std::string, std::string> texts;
  GenerationPlan plan;
  const DatasetTemplate& tmpl = dataset_template("offensiveness");
  GenerationOptions options;

  GenerationFixture()
  {
    plan.strategy = GenerationStrategy::one_x;
    for (int i = 0; i < 5; ++i) {
      const std::string id = "i" + std::to_string(i);
      texts[id] = "text number " + std::to_string(i);
      plan.entries.push_back({id, {std::size_t(i), std::size_t(i + 1)}, false, std::nullopt, {}, {}});
    }
    options.retry = no_sleep();
    options.parallelism = 2;
  }
};

}  // namespace

TEST(PersonaPool, OneEntryPerCombinationWithFrequencies)
{
  const auto schema = demoe::testing::two_category_schema();
  const std::vector<AnnotatorProfile> one{{"u1", {{"group", "a"}, {"noise", "x"}}}};
  EXPECT_EQ(build_persona_pool(one, schema).size(), 1u);
  const std::vector<AnnotatorProfile> three{
      {"u1", {{"group", "a"}, {"noise", "x"}}}, {"u2", {{"group", "a"}, {"noise", "x"}}}, {"u3", {{"group", "b"}}}};
  const auto pool = build_persona_pool(three, schema);
  ASSERT_EQ(pool.size(), 2u);
  std::multiset<std::size_t> freqs;
  for (const auto& p : pool) freqs.insert(p.frequency);
  EXPECT_EQ(freqs, (std::multiset<std::size_t>{1, 2}));
  for (const auto& p : pool) {
    EXPECT_EQ(p.profile.annotator_id, p.persona_id);
    EXPECT_EQ(p.persona_id, persona_id_for(p.combination));
  }
  EXPECT_EQ(build_persona_pool(three, schema)[0].persona_id, pool[0].persona_id);
}

TEST(PersonaPool, DescriptionSkipsUndisclosedAndRejectsBraces)
{
  const auto schema = demoe::testing::two_category_schema();
  EXPECT_EQ(describe_persona({"p", {{"group", "b"}}}, schema), "group: b");
  EXPECT_EQ(describe_persona({"p", {{"group", "a"}, {"noise", "y"}}}, schema), "group: a, noise: y");
  auto loose = schema;
  loose.categories[0].vocabulary.push_back("{text}");
  EXPECT_THROW(describe_persona({"p", {{"group", "{text}"}}}, loose), InputError);
}

TEST(Plan, QuotaArithmetic)
{
  const auto schema = demoe::testing::two_category_schema();
  const auto profiles = all_combination_profiles();
  const ProfileIndex index(profiles);
  const auto pool = build_persona_pool(profiles, schema);
  ASSERT_EQ(pool.size(), 9u);
  const auto records = counts_corpus({{"i0", 4}, {"i1", 8}, {"i2", 3}, {"i3", 5}}, profiles);

  const auto half = plan_generation(records, index, pool, schema, GenerationStrategy::half_x, 1);
  EXPECT_EQ(entry(half, "i0").personas.size(), 2u);
  EXPECT_EQ(entry(half, "i2").personas.size(), 2u);
  EXPECT_EQ(entry(half, "i3").personas.size(), 3u);
  const auto one = plan_generation(records, index, pool, schema, GenerationStrategy::one_x, 1);
  EXPECT_EQ(entry(one, "i0").personas.size(), 4u);
  EXPECT_EQ(one.total(), 20u);
  const auto fill = plan_generation(records, index, pool, schema, GenerationStrategy::fill, 1);
  EXPECT_EQ(entry(fill, "i2").personas.size(), 5u);
  EXPECT_EQ(entry(fill, "i1").personas.size(), 0u);

  for (const auto& plan : {half, one, fill})
    for (const auto& e : plan.entries) {
      EXPECT_FALSE(e.pool_exhausted);
      EXPECT_EQ(std::set<std::size_t>(e.personas.begin(), e.personas.end()).size(), e.personas.size());
    }
  EXPECT_EQ(plan_generation(records, index, pool, schema, GenerationStrategy::one_x, 1).to_json(pool).dump(),
            one.to_json(pool).dump());
}

TEST(Plan, RepeatsOnlyWhenPoolIsExhausted)
{
  const auto schema = demoe::testing::two_category_schema();
  const auto profiles = demoe::testing::alternating_profiles(4);
  const ProfileIndex index(profiles);
  const auto pool = build_persona_pool(profiles, schema);
  const auto records = counts_corpus({{"i0", 2}, {"i1", 4}, {"i2", 7}}, all_combination_profiles());
  const auto plan = plan_generation(records, index, pool, schema, GenerationStrategy::one_x, 3);
  EXPECT_FALSE(entry(plan, "i1").pool_exhausted);
  EXPECT_TRUE(entry(plan, "i2").pool_exhausted);
  EXPECT_EQ(entry(plan, "i2").personas.size(), 7u);
  EXPECT_THROW(plan_generation(records, index, {}, schema, GenerationStrategy::one_x, 3), InputError);
}

TEST(Plan, ClusterStrategySplitsQuota)
{
  const auto schema = demoe::testing::two_category_schema();
  const auto profiles = demoe::testing::alternating_profiles(12);
  const ProfileIndex index(profiles);
  const auto pool = build_persona_pool(profiles, schema);
  Rng rng(2);
  std::vector<AnnotationRecord> records;
  for (int i = 0; i < 6; ++i)
    for (const auto& p : profiles)
      records.push_back({"i" + std::to_string(i), p.annotator_id,
                         p.value("group") == "a" ? 1.0 + static_cast<double>(rng.uniform_index(2))
                                                 : 4.0 + static_cast<double>(rng.uniform_index(2)),
                         false, {}});
  ClusterPlanParams params;
  params.clusters = 2;
  params.representatives = 4;
  params.disagreeers = 4;
  params.per_instance = 6;
  const auto plan = plan_generation(records, index, pool, schema, GenerationStrategy::cluster, 5, params);
  for (const auto& e : plan.entries) {
    ASSERT_EQ(e.personas.size(), 6u);
    EXPECT_EQ(std::count(e.roles.begin(), e.roles.end(), "representative"), 3);
    EXPECT_EQ(std::count(e.roles.begin(), e.roles.end(), "disagreeer"), 3);
    EXPECT_TRUE(e.cluster.has_value());
  }
  const auto clustering = cluster_annotators(records, index, schema, 5, params);
  for (const auto& sel : clustering.selections) {
    std::set<std::string> reps(sel.representatives.begin(), sel.representatives.end());
    for (const auto& d : sel.disagreeers) EXPECT_EQ(reps.count(d), 0u);
  }
  params.clusters = 1;
  EXPECT_THROW(plan_generation(records, index, pool, schema, GenerationStrategy::cluster, 5, params), InputError);
}

TEST(Templates, CarryTheirInstructions)
{
  EXPECT_EQ(template_ids().size(), 5u);
  for (const auto& id : template_ids()) {
    const auto& t = dataset_template(id);
    EXPECT_NE(t.system_template.find(":::"), std::string::npos) << id;
    EXPECT_NE(t.system_template.find("{demographics}"), std::string::npos) << id;
    EXPECT_NE(t.user_template.find("{text}"), std::string::npos) << id;
  }
  EXPECT_NE(dataset_template("safety").system_template.find("Unclear whether the response is harmful"),
            std::string::npos);
  EXPECT_NE(dataset_template("pcc").system_template.find("Gives thorough and clear information"), std::string::npos);
  EXPECT_EQ(dataset_template("safety").scale.upper, 3.0);
  EXPECT_THROW(dataset_template("sarcasm"), InputError);
}

TEST(Templates, InstanceTextIsNotRescanned)
{
  const auto schema = demoe::testing::two_category_schema();
  const auto& t = dataset_template("toxicity");
  const auto req = render_prompt(t, {"p", {{"group", "a"}}}, schema, "i1", "say {demographics}", {}, "m");
  EXPECT_NE(req.user_prompt.find("say {demographics}"), std::string::npos);
  EXPECT_NE(req.system_prompt.find("group: a"), std::string::npos);
  EXPECT_THROW(fill_slots("{missing}", {}), InputError);
}

TEST(Parser, Examples)
{
  const auto& off = dataset_template("offensiveness");
  const auto r = parse_response("\"Too aggressive.\":::[5]", off);
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r.value->rating, 5.0);
  EXPECT_EQ(r.value->explanation, "Too aggressive.");
  EXPECT_TRUE(parse_response("\"Fine\":::[2].  ", off).ok());

  const auto out = parse_response("\"x\":::[7]", off);
  ASSERT_FALSE(out.ok());
  EXPECT_EQ(out.error->kind, ParseError::Kind::out_of_scale);
  EXPECT_EQ(parse_response("no separator [3]", off).error->kind, ParseError::Kind::missing_separator);
  EXPECT_EQ(parse_response("\"x\":::[three]", off).error->kind, ParseError::Kind::malformed_rating);
  EXPECT_EQ(parse_response("\"a:::b\":::[1] then :::[4]", off).value->rating, 4.0);

  const auto& pcc = dataset_template("pcc");
  const auto multi = parse_response(format_multi_quality_response(pcc.qualities, {"e1", "e2", "e3"}, {4, 3, 5}), pcc);
  ASSERT_TRUE(multi.ok());
  EXPECT_DOUBLE_EQ(multi.value->rating, 4.0);
  EXPECT_EQ(multi.value->quality_ratings, (std::vector<double>{4, 3, 5}));
  const auto partial = parse_response(format_multi_quality_response({pcc.qualities[0]}, {"e"}, {4}), pcc);
  EXPECT_EQ(partial.error->kind, ParseError::Kind::missing_quality);
}

TEST(Parser, FuzzNeverThrowsAndRoundTrips)
{
  const auto& off = dataset_template("offensiveness");
  Rng rng(41);
  const std::string alphabet = "ab :[]1234567890.\"\n\t{}-";
  for (int t = 0; t < 500; ++t) {
    std::string s;
    const auto len = rng.uniform_index(40);
    for (std::size_t i = 0; i < len; ++i) s += alphabet[rng.uniform_index(alphabet.size())];
    if (rng.uniform() < 0.3) s += ":::[" + std::to_string(rng.uniform_index(9)) + "]";
    ParseOutcome o;
    ASSERT_NO_THROW(o = parse_response(s, off)) << s;
    EXPECT_NE(o.value.has_value(), o.error.has_value());
    if (o.ok()) {
      EXPECT_GE(o.value->rating, 1.0);
      EXPECT_LE(o.value->rating, 5.0);
    }
  }
  for (int rating = 1; rating <= 5; ++rating) {
    const auto o = parse_response(format_response("because", rating), off);
    ASSERT_TRUE(o.ok());
    EXPECT_EQ(o.value->rating, rating);
    EXPECT_EQ(o.value->explanation, "because");
  }
}

TEST(Generation, StubRatingsComeBackUnchanged)
{
  GenerationFixture fx;
  OfflineStubProvider stub(fx.tmpl.scale);
  for (const auto& e : fx.plan.entries)
    for (auto p : e.personas) stub.set_rating(e.instance_id, fx.pool[p].persona_id, static_cast<int>(1 + p % 5));
  const auto result = generate(fx.plan, fx.pool, fx.texts, fx.schema, fx.tmpl, stub, nullptr, fx.options);
  ASSERT_EQ(result.annotations.size(), 10u);
  EXPECT_TRUE(result.failures.empty());
  std::size_t k = 0;
  for (const auto& e : fx.plan.entries)
    for (auto p : e.personas) {
      const auto& a = result.annotations[k++];
      EXPECT_EQ(a.instance_id, e.instance_id);
      EXPECT_EQ(a.persona_id, fx.pool[p].persona_id);
      EXPECT_EQ(a.rating, static_cast<double>(1 + p % 5));
      EXPECT_TRUE(a.to_record().is_synthetic);
    }
}

TEST(Generation, CacheHitsIssueNoRequests)
{
  GenerationFixture fx;
  ResponseCache cache;
  OfflineStubProvider first(fx.tmpl.scale);
  const auto a = generate(fx.plan, fx.pool, fx.texts, fx.schema, fx.tmpl, first, &cache, fx.options);
  EXPECT_EQ(first.requests(), 10u);
  OfflineStubProvider second(fx.tmpl.scale);
  const auto b = generate(fx.plan, fx.pool, fx.texts, fx.schema, fx.tmpl, second, &cache, fx.options);
  EXPECT_EQ(second.requests(), 0u);
  EXPECT_EQ(b.cache_hits, 10u);
  ASSERT_EQ(a.annotations.size(), b.annotations.size());
  for (std::size_t i = 0; i < a.annotations.size(); ++i) EXPECT_EQ(a.annotations[i].rating, b.annotations[i].rating);
}

TEST(Generation, PermanentFailureIsReportedAndTransientOnesRetried)
{
  GenerationFixture fx;
  OfflineStubProvider stub(fx.tmpl.scale);
  stub.fail_always("i2", fx.pool[2].persona_id);
  stub.fail_transiently("i0", fx.pool[0].persona_id, 2);
  std::vector<std::chrono::milliseconds> sleeps;
  std::mutex m;
  fx.options.retry.sleep = [&](std::chrono::milliseconds d) {
    std::lock_guard lock(m);
    sleeps.push_back(d);
  };
  const auto result = generate(fx.plan, fx.pool, fx.texts, fx.schema, fx.tmpl, stub, nullptr, fx.options);
  EXPECT_EQ(result.annotations.size(), 9u);
  ASSERT_EQ(result.failures.size(), 1u);
  EXPECT_EQ(result.failures[0].instance_id, "i2");
  EXPECT_EQ(result.failures[0].persona_id, fx.pool[2].persona_id);
  EXPECT_EQ(stub.requests(), 8u + 3u + 1u);
  EXPECT_FALSE(sleeps.empty());
}

TEST(Generation, UnparseableResponsesAreRetriedThenReported)
{
  GenerationFixture fx;
  OfflineStubProvider stub(fx.tmpl.scale);
  stub.set_response("i1", fx.pool[1].persona_id, "I would rather not say.");
  ResponseCache cache;
  const auto result = generate(fx.plan, fx.pool, fx.texts, fx.schema, fx.tmpl, stub, &cache, fx.options);
  ASSERT_EQ(result.failures.size(), 1u);
  EXPECT_EQ(result.failures[0].attempts, 3u);
  EXPECT_EQ(result.failures[0].raw_response, "I would rather not say.");
  EXPECT_EQ(cache.size(), 9u);
}

TEST(CacheKey, DistinguishesEveryField)
{
  ProviderRequest base{"offensiveness", "sys", "user", "group: a", "p1", "i1", "m", {}};
  std::set<std::string> keys{cache_key(base)};
  auto vary = [&](auto mutate) {
    auto r = base;
    mutate(r);
    keys.insert(cache_key(r));
  };
  vary([](ProviderRequest& r) { r.template_id = "toxicity"; });
  vary([](ProviderRequest& r) { r.user_prompt = "user2"; });
  vary([](ProviderRequest& r) { r.system_prompt = "sys2"; });
  vary([](ProviderRequest& r) { r.persona_description = "group: b"; });
  vary([](ProviderRequest& r) { r.persona_id = "p2"; });
  vary([](ProviderRequest& r) { r.instance_id = "i2"; });
  vary([](ProviderRequest& r) { r.model = "m2"; });
  vary([](ProviderRequest& r) { r.params.temperature = 0.1; });
  EXPECT_EQ(keys.size(), 9u);
  EXPECT_EQ(cache_key(base), cache_key(base));
  EXPECT_EQ(cache_key(base).size(), 64u);
}

TEST(Cache, PersistsAcrossInstances)
{
  demoe::testing::TempDir dir;
  const auto path = dir.path() / "cache.jsonl";
  {
    ResponseCache c(path);
    c.put("k1", "\"a\":::[1]");
    c.put("k2", "line\nbreak");
  }
  ResponseCache reloaded(path);
  EXPECT_EQ(reloaded.size(), 2u);
  EXPECT_EQ(reloaded.get("k2").value(), "line\nbreak");
  EXPECT_FALSE(reloaded.get("k3").has_value());
}

namespace {

struct AlignmentFixture {
  CorpusSchema schema;
  std::vector<AnnotatorProfile> humans{{"h1", {{"group", "a"}}}, {"h2", {{"group", "a"}}}, {"h3", {{"group", "b"}}}};
  ProfileIndex index{humans};
  std::vector<AnnotationRecord> human;
  std::vector<SyntheticAnnotation> synthetic;

  AlignmentFixture()
  {
    schema.scale = {1, 5, true};
    schema.categories = {{"group", {"a", "b"}}};
    auto h = [&](const char* i, const char* a, double r) { human.push_back({i, a, r, false, {}}); };
    auto s = [&](const char* i, const char* g, double r) {
      SyntheticAnnotation x;
      x.instance_id = i;
      x.persona_id = std::string("p_") + g;
      x.persona = {x.persona_id, {{"group", g}}};
      x.rating = r;
      synthetic.push_back(x);
    };
    h("i0", "h1", 1), h("i0", "h2", 3), h("i0", "h3", 5);
    h("i1", "h1", 2), h("i1", "h2", 2), h("i1", "h3", 1);
    h("i2", "h1", 5), h("i2", "h2", 4), h("i2", "h3", 2);
    h("i3", "h1", 3), h("i3", "h2", 3);
    h("i4", "h3", 4);
    s("i0", "a", 2), s("i0", "b", 5);
    s("i1", "a", 4), s("i1", "b", 3);
    s("i2", "a", 5);
    s("i3", "a", 1), s("i3", "b", 3);
    s("i4", "b", 1);
  }
};

const AlignmentGroup& group(const AlignmentReport& r, const std::string& value)
{
  for (const auto& g : r.groups)
    if (g.value == value) return g;
  throw std::out_of_range(value);
}

}  // namespace

TEST(Alignment, HandComputedFiveInstances)
{
  AlignmentFixture fx;
  const auto gm = alignment_report(fx.synthetic, fx.human, fx.index, fx.schema, AlignmentMode::group_mean);
  EXPECT_EQ(group(gm, "a").n_pairs, 4u);
  EXPECT_DOUBLE_EQ(group(gm, "a").mae, 4.5 / 4);
  EXPECT_EQ(group(gm, "b").n_pairs, 3u);
  EXPECT_DOUBLE_EQ(group(gm, "b").mae, 5.0 / 3);
  EXPECT_EQ(gm.n_pairs, 7u);
  EXPECT_DOUBLE_EQ(gm.mae, 9.5 / 7);

  const auto pa = alignment_report(fx.synthetic, fx.human, fx.index, fx.schema, AlignmentMode::per_annotator);
  EXPECT_EQ(group(pa, "a").n_pairs, 8u);
  EXPECT_DOUBLE_EQ(group(pa, "a").mae, 11.0 / 8);
  EXPECT_EQ(pa.n_pairs, 11u);
  EXPECT_DOUBLE_EQ(pa.mae, 16.0 / 11);
}

TEST(Alignment, MatchingRatingsGiveZeroError)
{
  AlignmentFixture fx;
  fx.human = {{"i0", "h1", 2, false, {}}, {"i0", "h3", 4, false, {}}, {"i1", "h1", 1, false, {}},
              {"i1", "h3", 5, false, {}}};
  std::vector<SyntheticAnnotation> synth;
  for (const auto& h : fx.human) {
    SyntheticAnnotation s;
    s.instance_id = h.instance_id;
    s.persona = {h.annotator_id == "h1" ? "p_a" : "p_b", {{"group", h.annotator_id == "h1" ? "a" : "b"}}};
    s.persona_id = s.persona.annotator_id;
    s.rating = h.rating;
    synth.push_back(s);
  }
  const auto r = alignment_report(synth, fx.human, fx.index, fx.schema);
  EXPECT_EQ(r.mae, 0.0);
  EXPECT_EQ(r.n_pairs, 4u);
  EXPECT_NEAR(r.pearson.r, 1.0, 1e-12);
  EXPECT_THROW(alignment_report(synth, {}, fx.index, fx.schema), InputError);
}
