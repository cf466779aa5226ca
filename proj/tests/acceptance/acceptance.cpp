// Acceptance checks. Prints one PASS/FAIL/SKIP line per criterion and exits
// non-zero if any criterion fails.
//
// Criterion 11 reads real corpora from directories named by the environment
// variables DEMOE_OFFENSIVENESS_DIR and DEMOE_POLITENESS_DIR. Each directory
// holds schema.json, annotations.jsonl and profiles.jsonl.

#include "demoe/blending.hpp"
#include "demoe/config.hpp"
#include "demoe/evaluation.hpp"
#include "demoe/io.hpp"
#include "demoe/losses.hpp"
#include "demoe/simulate.hpp"
#include "demoe/specialization.hpp"
#include "demoe/stats.hpp"
#include "demoe/synthesis.hpp"
#include "demoe/training.hpp"

#include "support/fixtures.hpp"
#include "support/oracles.hpp"

#include <json.hpp>

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

using namespace demoe;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

enum class Status { pass, fail, skip };

struct Outcome {
  Status status = Status::pass;
  std::string detail;
};

/// Collects violations; the first few are reported.
class Checker {
public:
  void expect(bool ok, const std::string& what)
  {
    ++checks_;
    if (ok) return;
    if (failures_.size() < 3) failures_.push_back(what);
    ++violations_;
  }
  void near(double a, double b, double tol, const std::string& what)
  {
    std::ostringstream s;
    s << what << ": " << std::setprecision(12) << a << " vs " << b;
    expect(std::abs(a - b) <= tol, s.str());
  }
  std::size_t violations() const { return violations_; }

  Outcome outcome(const std::string& summary) const
  {
    std::ostringstream s;
    s << summary << "; " << checks_ << " checks, " << violations_ << " violations";
    for (const auto& f : failures_) s << "; " << f;
    return {violations_ == 0 ? Status::pass : Status::fail, s.str()};
  }

private:
  std::size_t checks_ = 0;
  std::size_t violations_ = 0;
  std::vector<std::string> failures_;
};

double seconds_since(Clock::time_point start)
{
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fixed(double v, int digits = 3)
{
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

PhaseSchedule preset_schedule()
{
  PhaseSchedule s;
  s.phases = {PhaseWeights{0.261, 0.051, 0.098}, PhaseWeights{0.464, 0.252, 0.102}, PhaseWeights{0.897, 0.45, 0.585}};
  return s;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

Outcome gradient_correctness()
{
  const auto start = Clock::now();
  demoe::testing::LossFixture fx;
  const auto check = demoe::testing::check_gradient(*fx.model, fx.store, fx.batch, fx.noise,
                                                    demoe::testing::preset_loss_weights(),
                                                    demoe::testing::preset_phase_c(), Phase::C);
  const double elapsed = seconds_since(start);
  const bool ok = fx.batch.size() == 16 && fx.model->num_experts() == 2 && check.checked > 0 &&
                  check.max_relative_error < 1e-3 && elapsed < 10.0;
  return {ok ? Status::pass : Status::fail,
          std::to_string(check.checked) + " coordinates, max relative error " + std::to_string(check.max_relative_error) +
              " (" + check.worst + "), " + fixed(elapsed, 2) + " s"};
}

// ---------------------------------------------------------------------------
// 2. Loss-term oracles

Outcome loss_oracles()
{
  using namespace demoe::testing;
  Checker c;
  Rng rng(2024);
  const int trials = 25;
  for (int t = 0; t < trials; ++t) {
    GaussianEmbedding e{random_matrix(rng, 5, 1).col(0), random_matrix(rng, 5, 1).col(0)};
    c.near(kl_to_standard_normal(e), brute_kl(e), 1e-9, "kl");

    Eigen::VectorXd counts(4);
    for (auto& v : counts) v = 0.05 + 4 * rng.uniform();
    c.near(load_std_loss(counts), brute_load_std(counts), 1e-9, "load_std");

    std::vector<SelectedOutputs> xs(4);
    for (auto& s : xs)
      for (int j = 0; j < 2 + t % 3; ++j) s.push_back(random_matrix(rng, 5, 1).col(0));
    c.near(orthogonality_loss(xs), brute_orthogonality(xs), 1e-9, "orthogonality");

    const Eigen::MatrixXd scores = random_matrix(rng, 6, 3);
    c.near(variance_loss(scores), brute_variance(scores), 1e-9, "variance");

    const Eigen::MatrixXd p = random_probabilities(rng, 10, 3);
    SubgroupLabels g;
    for (int d = 0; d < 2; ++d) {
      std::vector<std::size_t> col;
      for (int i = 0; i < 10; ++i) col.push_back(rng.uniform_index(3));
      g.labels.push_back(col);
    }
    c.near(demo_specialization_loss(p, g), brute_demo(p, g), 1e-9, "demo_specialization");
  }
  GaussianEmbedding unit{Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Zero(1)};
  c.near(kl_to_standard_normal(unit), 0.5, 1e-12, "kl closed form");
  return c.outcome(std::to_string(trials) + " randomized inputs per term");
}

// ---------------------------------------------------------------------------
// 3. Routing invariants

Outcome routing_invariants()
{
  Checker c;
  Rng rng(77);
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    const std::size_t E = 2 + rng.uniform_index(7);
    const std::size_t D = 1 + rng.uniform_index(6);
    const std::size_t k = 1 + rng.uniform_index(E);
    Eigen::VectorXd scores(static_cast<Eigen::Index>(E));
    for (auto& v : scores) v = rng.normal() * 3;
    const auto base = top_k_indices(scores, k);
    const double a = 0.1 + 5 * rng.uniform(), b = rng.normal() * 10;
    c.expect(top_k_indices((a * scores.array() + b).matrix(), k) == base, "affine transform changed top-k");
    c.expect(top_k_indices(scores.array().exp().matrix(), k) == base, "exp changed top-k");
    c.expect(top_k_indices(softmax(scores), k) == base, "softmax changed top-k");

    GateParameters gate{Eigen::MatrixXd(static_cast<Eigen::Index>(E), static_cast<Eigen::Index>(D)),
                        Eigen::VectorXd(static_cast<Eigen::Index>(E))};
    for (auto& v : gate.weight.reshaped()) v = rng.normal();
    for (auto& v : gate.bias) v = rng.normal();
    ModelInput in{Eigen::VectorXd(static_cast<Eigen::Index>(D))};
    for (auto& v : in.x) v = rng.normal();

    const auto all = route(gate, in, E);
    std::set<std::size_t> chosen(all.selected.begin(), all.selected.end());
    c.expect(chosen.size() == E, "k = E did not select every expert");
    double wsum = 0;
    for (double w : all.weights) wsum += w;
    c.expect(std::abs(wsum - 1.0) < 1e-12, "k = E weights do not sum to one");

    const auto some = route(gate, in, k);
    c.expect(some.selected == top_k_indices(some.probabilities, k), "selection is not the top-k of p");
    c.expect(some.selected.size() == k, "wrong number of selected experts");

    GateParameters zero{Eigen::MatrixXd::Zero(gate.weight.rows(), gate.weight.cols()),
                        Eigen::VectorXd::Zero(gate.bias.size())};
    const auto uniform = route(zero, in, k);
    for (Eigen::Index j = 0; j < uniform.probabilities.size(); ++j)
      c.expect(std::abs(uniform.probabilities(j) - 1.0 / static_cast<double>(E)) < 1e-15, "zero gate not uniform");
  }
  return c.outcome(std::to_string(trials) + " randomized trials");
}

// ---------------------------------------------------------------------------
// 4. Metric oracles

std::vector<AnnotationRecord> unit_records(const std::map<std::string, std::vector<double>>& units)
{
  std::vector<AnnotationRecord> out;
  for (const auto& [id, ratings] : units)
    for (std::size_t k = 0; k < ratings.size(); ++k) out.push_back({id, "a" + std::to_string(k), ratings[k], false, {}});
  return out;
}

Outcome metric_oracles()
{
  Checker c;
  c.near(krippendorff_alpha(unit_records({{"i1", {1, 1}}, {"i2", {3, 3, 3}}, {"i3", {5, 5}}})), 1.0, 1e-12,
         "alpha perfect agreement");
  c.near(krippendorff_alpha(unit_records({{"i1", {2, 2, 2}}, {"i2", {4, 4}}})), 1.0, 1e-12, "alpha perfect agreement");
  // Coincidence matrix of the 4-instance fixture gives alpha = 1 - 8 * 6 / 268.
  c.near(krippendorff_alpha(unit_records({{"i1", {1, 1}}, {"i2", {2, 3}}, {"i3", {3, 3, 4}}, {"i4", {5, 4}}})),
         55.0 / 67.0, 1e-9, "alpha hand fixture");

  Rng rng(404);
  for (int t = 0; t < 200; ++t) {
    const auto p = demoe::testing::random_distribution(rng, 5);
    const auto q = demoe::testing::random_distribution(rng, 5);
    c.near(emd_1d(p, q), demoe::testing::transport_cost(p, q), 1e-9, "emd vs transport");
  }

  std::vector<AnnotationRecord> train, test;
  for (int i = 0; i < 40; ++i) train.push_back({"t" + std::to_string(i), "a", 1.0 + i % 5, false, {}});
  for (int i = 0; i < 25; ++i) test.push_back({"s" + std::to_string(i), "a", 1.0 + (i * 3) % 5, false, {}});
  const auto r = pearson_r(baseline_predict(BaselineKind::mean, train, test, {1, 5, true}, 0));
  c.expect(r.r == 0.0 && r.degenerate, "mean predictor correlation is not a flagged 0");
  return c.outcome("alpha fixtures, 200 EMD pairs, mean-predictor r");
}

// ---------------------------------------------------------------------------
// 5. Specialization behaviour

struct SpecializationRun {
  double group = 0.0;
  double noise = 0.0;
};

SpecializationRun specialization_run(std::uint64_t seed)
{
  auto spec = signal_and_noise_spec(seed);
  spec.instances = 120;
  spec.annotators = 36;
  spec.per_instance = 5;
  spec.text_weight = 0.0;
  spec.noise = 0.3;
  spec.categories[0].effects = {-1.5, 1.5};
  spec.categories[0].text_interactions = {};
  const auto sim = simulate_corpus(spec);
  const ProfileIndex profiles(sim.corpus.profiles);
  const auto examples = make_examples(sim.corpus.records, profiles);

  ModelConfig cfg;
  cfg.text_dim = sim.store.dim();
  cfg.annotator_dim = 8;
  cfg.demographic_dim = 8;
  cfg.num_experts = 2;
  cfg.top_k = 2;
  cfg.expert_hidden = 16;
  cfg.expert_output = 8;
  cfg.seed = seed;
  DemMoE model(cfg, sim.schema, RatingNormalizer::fit(sim.corpus.records), unique_annotators(sim.corpus.records));

  TrainingOptions opts;
  opts.optimizer.lr_gate = 0.05;
  opts.optimizer.lr_main = 0.02;
  opts.optimizer.max_epochs = 30;
  opts.optimizer.patience = 30;
  opts.optimizer.batch_size = 16;
  opts.optimizer.seed = seed;
  opts.loss.demo_specialization = 0.0112;
  opts.schedule = preset_schedule();
  const auto trained = train(std::move(model), sim.store, examples, {}, opts).model;

  std::vector<RoutingDecision> decisions;
  std::vector<const AnnotatorProfile*> ptrs;
  for (const auto& ex : examples) {
    decisions.push_back(trained.route_sample(sim.store, ex.instance_id, ex.annotator_id, *ex.profile));
    ptrs.push_back(ex.profile);
  }
  const auto usage = collect_group_usage(decisions, ptrs, sim.schema, trained.num_experts());
  return {within_group_score(usage[0]).normalized, within_group_score(usage[1]).normalized};
}

Outcome specialization_behaviour()
{
  const auto start = Clock::now();
  int passed = 0;
  std::ostringstream detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = specialization_run(seed);
    const bool ok = r.group >= 2.0 * r.noise && r.group > 0;
    passed += ok;
    detail << (seed > 1 ? ", " : "") << "seed " << seed << " group/noise " << std::setprecision(3) << r.group << "/"
           << r.noise;
  }
  const double elapsed = seconds_since(start);
  const bool ok = passed >= 4 && elapsed < 120.0;
  return {ok ? Status::pass : Status::fail,
          std::to_string(passed) + "/5 seeds with group >= 2x noise (" + detail.str() + "), " + fixed(elapsed, 1) + " s"};
}

// ---------------------------------------------------------------------------
// 6. Learning sanity

struct SanityRun {
  double model = 0.0;
  double mean = 0.0;
};

SanityRun sanity_run(std::uint64_t seed)
{
  auto spec = signal_and_noise_spec(seed);
  spec.instances = 100;
  spec.annotators = 40;
  spec.per_instance = 5;
  const auto sim = simulate_corpus(spec);
  const ProfileIndex profiles(sim.corpus.profiles);
  const auto assignment = split(sim.corpus.records, seed, {0.8, 0.1, 0.1});
  const auto train_records = select_split(sim.corpus.records, assignment, Split::train);
  const auto dev_records = select_split(sim.corpus.records, assignment, Split::dev);
  const auto test_records = select_split(sim.corpus.records, assignment, Split::test);

  ModelConfig cfg;
  cfg.text_dim = sim.store.dim();
  cfg.annotator_dim = 8;
  cfg.demographic_dim = 8;
  cfg.num_experts = 2;
  cfg.top_k = 2;
  cfg.expert_hidden = 16;
  cfg.expert_output = 8;
  cfg.seed = seed;
  DemMoE model(cfg, sim.schema, RatingNormalizer::fit(train_records), unique_annotators(train_records));

  TrainingOptions opts;
  opts.optimizer.lr_gate = 0.01;
  opts.optimizer.lr_main = 0.02;
  opts.optimizer.max_epochs = 60;
  opts.optimizer.patience = 10;
  opts.optimizer.batch_size = 16;
  opts.optimizer.seed = seed;
  opts.loss.demo_specialization = 0.0112;
  opts.schedule = preset_schedule();
  const auto result = train(std::move(model), sim.store, make_examples(train_records, profiles),
                            make_examples(dev_records, profiles), opts);

  const auto predictions = predict_records(result.model, sim.store, test_records, profiles);
  const auto baseline = baseline_predict(BaselineKind::mean, train_records, test_records, sim.schema.scale, seed);
  return {mae(predictions), mae(baseline)};
}

Outcome learning_sanity()
{
  const auto start = Clock::now();
  int passed = 0;
  std::ostringstream detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = sanity_run(seed);
    passed += r.model <= 0.9 * r.mean;
    detail << (seed > 1 ? ", " : "") << "seed " << seed << " " << fixed(r.model) << " vs " << fixed(r.mean);
  }
  const double elapsed = seconds_since(start);
  const bool ok = passed >= 4 && elapsed < 300.0;
  return {ok ? Status::pass : Status::fail, std::to_string(passed) + "/5 seeds at least 10% below the mean predictor (" +
                                                detail.str() + "), " + fixed(elapsed, 1) + " s"};
}

// ---------------------------------------------------------------------------
// 7. Weighting algebra

Outcome weighting_algebra()
{
  Checker c;
  c.expect(synthetic_weight(2, 0.5, 0.25, WeightClip{}).raw == 16.0, "A=2, T=0.5, P=0.25 does not give 16");
  c.expect(synthetic_weight(1, 1, 1, WeightClip{}).clipped == 1.0, "unit components do not give 1");

  auto spec = signal_and_noise_spec(9);
  spec.instances = 20;
  spec.annotators = 12;
  spec.per_instance = 5;
  const auto sim = simulate_corpus(spec);
  const ProfileIndex profiles(sim.corpus.profiles);
  const auto all = make_examples(sim.corpus.records, profiles);
  std::vector<TrainingExample> real, synthetic;
  for (std::size_t i = 0; i < all.size(); ++i) (i % 3 == 0 ? synthetic : real).push_back(all[i]);
  for (const auto& r : make_examples(sim.corpus.records, profiles)) c.expect(r.weight == 1.0, "real example weight != 1");

  ModelConfig cfg;
  cfg.text_dim = sim.store.dim();
  cfg.annotator_dim = 4;
  cfg.demographic_dim = 4;
  cfg.num_experts = 2;
  cfg.expert_hidden = 6;
  cfg.expert_output = 4;
  cfg.seed = 3;
  const DemMoE model(cfg, sim.schema, RatingNormalizer(3, 1), unique_annotators(sim.corpus.records));
  BlendOptions opts;
  opts.training.optimizer.lr_gate = 0.01;
  opts.training.optimizer.lr_main = 0.01;
  opts.training.optimizer.max_epochs = 3;
  opts.training.optimizer.batch_size = 8;
  opts.training.optimizer.seed = 5;
  opts.training.schedule = preset_schedule();

  opts.strategy = BlendStrategy::unweighted;
  const auto unweighted = blend_train(model, sim.store, real, synthetic, {}, opts);
  // Real examples carrying another weight must still count with weight 1.
  auto heavy_real = real;
  for (auto& r : heavy_real) r.weight = 7.0;
  const auto heavy = blend_train(model, sim.store, heavy_real, synthetic, {}, opts);
  opts.strategy = BlendStrategy::weighted;
  const auto ones = blend_train(model, sim.store, real, synthetic, {}, opts, std::vector<double>(synthetic.size(), 1.0));
  const auto log_u = unweighted.logs.at(0).to_json(false).dump();
  c.expect(log_u == ones.logs.at(0).to_json(false).dump(), "weighted(w=1) log differs from unweighted");
  c.expect(log_u == heavy.logs.at(0).to_json(false).dump(), "real data did not enter with weight 1");

  demoe::testing::LossFixture fx;
  const LossWeights none{0, 0, 0, 1};
  const PhaseWeights off{0, 0, 0};
  Rng rng(12);
  for (int t = 0; t < 20; ++t) {
    std::vector<TrainingExample> weighted(fx.batch.begin(), fx.batch.begin() + 5);
    const std::size_t j = rng.uniform_index(weighted.size());
    auto duplicated = weighted;
    weighted[j].weight = 2.0;
    duplicated.push_back(duplicated[j]);
    const double a = total_loss(*fx.model, fx.store, weighted, nullptr, none, off, Phase::A, false).breakdown.mse;
    const double b = total_loss(*fx.model, fx.store, duplicated, nullptr, none, off, Phase::A, false).breakdown.mse;
    c.near(a * 5, b * 6, 1e-9, "w=2 vs duplicate MSE contribution");
  }
  return c.outcome("hand weights, blend logs, 20 duplicate-weight batches");
}

// ---------------------------------------------------------------------------
// 8. Generation-plan arithmetic

Outcome plan_arithmetic()
{
  Checker c;
  Rng rng(88);
  const auto schema = demoe::testing::two_category_schema();
  const int corpora = 100;
  for (int t = 0; t < corpora; ++t) {
    const std::size_t n_annotators = 4 + rng.uniform_index(20);
    std::vector<AnnotatorProfile> profiles;
    const std::vector<std::string> groups{"a", "b", "undisclosed"}, noises{"x", "y", "undisclosed"};
    for (std::size_t a = 0; a < n_annotators; ++a) {
      AnnotatorProfile p{"u" + std::to_string(a), {}};
      const auto& g = groups[rng.uniform_index(3)];
      const auto& n = noises[rng.uniform_index(3)];
      if (g != "undisclosed") p.attributes["group"] = g;
      if (n != "undisclosed") p.attributes["noise"] = n;
      profiles.push_back(p);
    }
    const ProfileIndex index(profiles);
    std::vector<AnnotationRecord> records;
    std::map<std::string, std::size_t> counts;
    const std::size_t n_instances = 1 + rng.uniform_index(12);
    for (std::size_t i = 0; i < n_instances; ++i) {
      const std::string id = "i" + std::to_string(i);
      const auto m = 1 + rng.uniform_index(n_annotators);
      for (auto a : rng.sample_without_replacement(n_annotators, m))
        records.push_back({id, profiles[a].annotator_id, 1.0 + static_cast<double>(rng.uniform_index(5)), false, {}});
      counts[id] = m;
    }
    std::size_t max_n = 0;
    for (const auto& [id, n] : counts) max_n = std::max(max_n, n);
    const auto pool = build_persona_pool(profiles, schema);
    const std::uint64_t seed = rng.uniform_index(1000);

    for (auto strategy : {GenerationStrategy::half_x, GenerationStrategy::one_x, GenerationStrategy::fill}) {
      const auto plan = plan_generation(records, index, pool, schema, strategy, seed);
      c.expect(plan.entries.size() == counts.size(), "plan does not cover every instance");
      for (const auto& e : plan.entries) {
        const std::size_t n = counts.at(e.instance_id);
        const std::size_t expected = strategy == GenerationStrategy::half_x ? (n + 1) / 2
                                     : strategy == GenerationStrategy::one_x ? n
                                                                             : max_n - n;
        c.expect(e.personas.size() == expected,
                 std::string(to_string(strategy)) + " quota " + std::to_string(e.personas.size()) + " != " +
                     std::to_string(expected));
        const std::set<std::size_t> distinct(e.personas.begin(), e.personas.end());
        c.expect(e.pool_exhausted == (expected > pool.size()), "pool_exhausted flag wrong");
        if (!e.pool_exhausted) c.expect(distinct.size() == e.personas.size(), "persona repeated without exhaustion");
      }
    }

    if (n_annotators >= 4) {
      ClusterPlanParams params;
      params.clusters = 2 + rng.uniform_index(2);
      params.representatives = 1 + rng.uniform_index(5);
      params.disagreeers = 1 + rng.uniform_index(5);
      params.per_instance = 2 * (1 + rng.uniform_index(5));
      const auto plan = plan_generation(records, index, pool, schema, GenerationStrategy::cluster, seed, params);
      for (const auto& e : plan.entries) {
        const auto reps = static_cast<std::size_t>(std::count(e.roles.begin(), e.roles.end(), "representative"));
        const auto dis = static_cast<std::size_t>(std::count(e.roles.begin(), e.roles.end(), "disagreeer"));
        c.expect(reps == params.per_instance / 2 && dis == params.per_instance / 2,
                 "cluster plan split " + std::to_string(reps) + "+" + std::to_string(dis));
      }
    }
  }
  return c.outcome(std::to_string(corpora) + " randomized corpora");
}

// ---------------------------------------------------------------------------
// 9. Parser totality

Outcome parser_totality()
{
  Checker c;
  Rng rng(99);
  const auto ids = template_ids();
  const std::string alphabet = "abcXYZ :;[]()0123456789-.,\"'\n\t{}";
  const int fuzzed = 1000;
  for (int t = 0; t < fuzzed; ++t) {
    const auto& tmpl = dataset_template(ids[rng.uniform_index(ids.size())]);
    std::string raw;
    const auto kind = rng.uniform_index(4);
    if (kind == 0) {
      for (std::size_t i = 0, n = rng.uniform_index(60); i < n; ++i) raw += alphabet[rng.uniform_index(alphabet.size())];
    } else if (kind == 1) {
      raw = "\"reason\":::[" + std::to_string(static_cast<long>(rng.uniform_index(12)) - 3) + "]";
    } else if (kind == 2) {
      for (std::size_t i = 0, n = rng.uniform_index(3); i < n; ++i) raw += tmpl.qualities.empty() ? "x" : tmpl.qualities[i % tmpl.qualities.size()];
      raw += ":::[" + std::to_string(rng.uniform_index(7)) + "]";
      for (std::size_t i = 0, n = rng.uniform_index(10); i < n; ++i) raw += alphabet[rng.uniform_index(alphabet.size())];
    } else {
      for (std::size_t i = 0, n = rng.uniform_index(30); i < n; ++i) raw += static_cast<char>(rng.uniform_index(256));
    }
    try {
      const auto out = parse_response(raw, tmpl);
      c.expect(out.value.has_value() != out.error.has_value(), "outcome is neither a rating nor an error");
      if (out.ok()) c.expect(tmpl.scale.contains(out.value->rating), "accepted rating out of scale");
    } catch (const std::exception& e) {
      c.expect(false, std::string("parser threw: ") + e.what());
    }
  }
  for (const auto& id : ids) {
    const auto& tmpl = dataset_template(id);
    for (double v : tmpl.scale.points()) {
      const int rating = static_cast<int>(v);
      std::string raw;
      if (tmpl.kind == ResponseKind::single) {
        raw = format_response("explanation for " + std::to_string(rating), rating);
      } else {
        raw = format_multi_quality_response(tmpl.qualities, std::vector<std::string>(tmpl.qualities.size(), "because"),
                                            std::vector<int>(tmpl.qualities.size(), rating));
      }
      const auto out = parse_response(raw, tmpl);
      c.expect(out.ok() && out.value->rating == v, id + " round trip failed for rating " + std::to_string(rating));
    }
  }
  return c.outcome(std::to_string(fuzzed) + " fuzzed responses, round trip on " + std::to_string(ids.size()) +
                   " templates");
}

// ---------------------------------------------------------------------------
// 10. Determinism

int run_cli(const std::string& args, const fs::path& log)
{
  const std::string cmd = std::string("\"") + DEMOE_CLI_PATH + "\" " + args + " >\"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

nlohmann::json output_digests(const fs::path& out)
{
  std::ifstream in(out / "manifest.json");
  const auto manifest = nlohmann::json::parse(in);
  nlohmann::json digests = nlohmann::json::object();
  for (const auto& o : manifest.at("outputs"))
    digests[fs::path(o.at("path").get<std::string>()).filename().string()] = o.at("sha256");
  return digests;
}

Outcome determinism()
{
  demoe::testing::TempDir dir;
  auto spec = signal_and_noise_spec(21);
  spec.instances = 40;
  spec.annotators = 16;
  spec.per_instance = 5;
  write_simulated_corpus(simulate_corpus(spec), dir.path() / "corpus");
  const auto c = dir.path() / "corpus";
  const std::string corpus = "--schema " + (c / "schema.json").string() + " --annotations " +
                             (c / "annotations.jsonl").string() + " --profiles " + (c / "profiles.jsonl").string();
  const std::string embeddings = " --embeddings " + (c / "embeddings.txt").string();
  const std::string checkpoint = " --checkpoint " + (dir.path() / "train_1" / "checkpoint.json").string();
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train", "train " + corpus + embeddings + " --set max_epochs=3 --set seed=4"},
      {"evaluate", "evaluate " + corpus + embeddings + checkpoint + " --set n_bootstrap=200 --set seed=4"},
      {"generate", "generate-synthetic " + corpus + " --texts " + (c / "texts.jsonl").string() +
                       " --set dataset=offensiveness --set generation_strategy=one_x --set seed=4"},
  };
  Checker check;
  std::size_t compared = 0;
  for (const auto& [name, args] : commands) {
    nlohmann::json first;
    for (int run = 1; run <= 2; ++run) {
      const auto out = dir.path() / (name + "_" + std::to_string(run));
      const int code = run_cli(args + " --out " + out.string(), dir.path() / "log");
      check.expect(code == 0, name + " exited with " + std::to_string(code));
      if (code != 0) break;
      const auto digests = output_digests(out);
      check.expect(!digests.empty(), name + " recorded no outputs");
      if (run == 1) first = digests;
      else check.expect(digests == first, name + " output digests differ between runs");
      compared += digests.size();
    }
  }
  return check.outcome("train, evaluate, generate-synthetic run twice; " + std::to_string(compared) + " digests");
}

// ---------------------------------------------------------------------------
// 11. Real corpora (optional)

struct PaperRow {
  const char* env;
  const char* name;
  std::size_t instances;
  std::size_t annotators;
  std::size_t annotations;
  double alpha;
  double entropy;
  std::optional<double> mean_predictor_mae;
};

Outcome real_corpora()
{
  const std::vector<PaperRow> rows = {
      {"DEMOE_OFFENSIVENESS_DIR", "offensiveness", 1500, 262, 25042, 0.287, 1.212, 0.815},
      {"DEMOE_POLITENESS_DIR", "politeness", 3718, 506, 13036, 0.440, 1.395, std::nullopt},
  };
  Checker c;
  std::vector<std::string> used;
  for (const auto& row : rows) {
    const char* dir = std::getenv(row.env);
    if (!dir || !*dir) continue;
    used.push_back(row.name);
    const fs::path d(dir);
    const auto schema = CorpusSchema::load(d / "schema.json");
    const auto corpus = ingest(d / "annotations.jsonl", d / "profiles.jsonl", schema);
    const auto stats = compute_statistics(corpus, schema);
    c.expect(stats.n_instances == row.instances, std::string(row.name) + " instances " + std::to_string(stats.n_instances));
    c.expect(stats.n_annotators == row.annotators,
             std::string(row.name) + " annotators " + std::to_string(stats.n_annotators));
    c.expect(stats.n_annotations == row.annotations,
             std::string(row.name) + " annotations " + std::to_string(stats.n_annotations));
    c.near(stats.krippendorff_alpha.value_or(NAN), row.alpha, 0.01, std::string(row.name) + " alpha");
    c.near(stats.mean_entropy, row.entropy, 0.01, std::string(row.name) + " entropy");
    if (row.mean_predictor_mae) {
      const auto config = RunConfig::resolve(std::string(row.name), std::nullopt, {});
      const auto assignment = split(corpus.records, config.seed(), config.split_fractions());
      const auto train_records = select_split(corpus.records, assignment, Split::train);
      const auto test_records = select_split(corpus.records, assignment, Split::test);
      const double m = mae(baseline_predict(BaselineKind::mean, train_records, test_records, schema.scale, 0));
      c.near(m, *row.mean_predictor_mae, 0.01, std::string(row.name) + " mean-predictor MAE");
    }
  }
  if (used.empty())
    return {Status::skip, "set DEMOE_OFFENSIVENESS_DIR and/or DEMOE_POLITENESS_DIR to corpus directories"};
  std::string names;
  for (const auto& n : used) names += (names.empty() ? "" : ", ") + n;
  return c.outcome(names);
}

}  // namespace

int main()
{
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"loss-term oracles", loss_oracles},
      {"routing invariants", routing_invariants},
      {"metric oracles", metric_oracles},
      {"specialization behaviour", specialization_behaviour},
      {"learning sanity", learning_sanity},
      {"weighting algebra", weighting_algebra},
      {"generation-plan arithmetic", plan_arithmetic},
      {"parser totality", parser_totality},
      {"determinism", determinism},
      {"real corpora (optional)", real_corpora},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {Status::fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "SKIP";
    failures += o.status == Status::fail;
    std::cout << tag << " " << (i + 1) << " " << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
