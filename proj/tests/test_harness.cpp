#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "copi/suite.hpp"
#include "copi/train.hpp"

using namespace copi;

namespace {

TrainConfig small_config(uint64_t seed) {
    TrainConfig cfg;
    cfg.model = ModelConfig::variant(ModelVariant::full, seed);
    cfg.seed = seed;
    cfg.batch_size = 16;
    cfg.max_epochs = 3;
    cfg.patience = 3;
    cfg.deterministic = true;
    return cfg;
}

}  // namespace

TEST_CASE("train config parses combined key=value text") {
    const std::string text =
        "feature_dim=64\nrepetitions=2\nloss=cross_entropy\nsampling=soft\ntau=1\n"
        "baseline_b=0\ncontrast=true\ninference=false\nseed=5\n"
        "train_data=a.rpmd\nval_data=b.rpmd\ntest_data=c.rpmd\n"
        "batch_size=8\nmax_epochs=17\npatience=4\nlr=0.002\njobs=2\ndeterministic=true\n";
    const TrainConfig cfg = TrainConfig::parse(text);
    CHECK(cfg.train_path == "a.rpmd");
    CHECK(cfg.batch_size == 8);
    CHECK(cfg.max_epochs == 17);
    CHECK(cfg.patience == 4);
    CHECK(cfg.lr == 0.002);
    CHECK(cfg.jobs == 2);
    CHECK(cfg.deterministic);
    CHECK(cfg.model.loss == LossMode::cross_entropy);
    CHECK(cfg.model.seed == 5);
    CHECK(cfg.seed == 5);

    CHECK_THROWS_AS(TrainConfig::parse("batch_size=0\n"), std::invalid_argument);
    CHECK_THROWS_AS(TrainConfig::parse("patience=0\n"), std::invalid_argument);
}

TEST_CASE("untrained model never beats chance on a balanced test set") {
    // Distractors surround the answer in attribute space, and the argmax of
    // a random smooth scorer favors the extremes of that cloud, so an
    // untrained model sits at or somewhat below the 12.5% chance level.
    // Chance is an upper bound here, not a two-sided target.
    const auto test_set = generate_instances(777, 2000);
    ModelConfig config = ModelConfig::variant(ModelVariant::full, 1);
    ParameterStore params = build_parameters(config);
    const EvalResult r = evaluate(params, config, test_set, 2);
    CHECK(r.accuracy > 0.02);
    CHECK(r.accuracy < 0.125 + 0.03);

    // evaluating twice gives identical numbers
    const EvalResult r2 = evaluate(params, config, test_set, 2);
    CHECK(r.accuracy == r2.accuracy);
    CHECK(r.mean_loss == r2.mean_loss);
}

TEST_CASE("oracle policy scores 100%, a uniform-random policy scores chance") {
    const auto data = generate_instances(31337, 10000);
    int64_t oracle_correct = 0;
    Rng rng(5);
    int64_t random_correct = 0;
    for (const auto& inst : data) {
        if (oracle_solve(inst) == inst.answer_index) ++oracle_correct;
        if (rng.index(8) == inst.answer_index) ++random_correct;
    }
    CHECK(oracle_correct == static_cast<int64_t>(data.size()));
    const double random_acc = static_cast<double>(random_correct) / data.size();
    CHECK(random_acc > 0.115);
    CHECK(random_acc < 0.135);
}

TEST_CASE("training is reproducible bit for bit") {
    const auto train_set = generate_instances(100, 48);
    const auto val_set = generate_instances(101, 24);
    const auto test_set = generate_instances(102, 24);
    const TrainOutcome a = train(small_config(3), train_set, val_set, test_set);
    const TrainOutcome b = train(small_config(3), train_set, val_set, test_set);
    CHECK(a.report.to_json() == b.report.to_json());
    for (size_t k = 0; k < a.params.count(); ++k)
        CHECK(a.params.entries()[k].second->values == b.params.entries()[k].second->values);
}

TEST_CASE("early stopping never overshoots the patience window") {
    const auto train_set = generate_instances(200, 64);
    const auto val_set = generate_instances(201, 32);
    TrainConfig cfg = small_config(7);
    cfg.max_epochs = 40;
    cfg.patience = 3;
    const TrainOutcome out = train(cfg, train_set, val_set, {});
    const int last_epoch = static_cast<int>(out.report.epochs.size()) - 1;
    CHECK(last_epoch - out.report.best_epoch <= cfg.patience);
    CHECK(static_cast<int>(out.report.epochs.size()) <= cfg.max_epochs);
}

TEST_CASE("full model drives the loss below 0.01 on one instance within 500 steps") {
    const auto one = generate_instances(42, 1);
    TrainConfig cfg;
    cfg.model = ModelConfig::variant(ModelVariant::full, 9);
    cfg.batch_size = 1;
    cfg.max_epochs = 500;
    cfg.patience = 500;
    cfg.deterministic = true;
    const TrainOutcome out = train(cfg, one, one, one);
    double lowest = 1e9;
    int first_below = -1;
    for (size_t e = 0; e < out.report.epochs.size(); ++e) {
        lowest = std::min(lowest, out.report.epochs[e].train_loss);
        if (first_below < 0 && out.report.epochs[e].train_loss < 0.01)
            first_below = static_cast<int>(e);
    }
    REQUIRE(first_below >= 0);
    CHECK(first_below < 500);
}

TEST_CASE("evaluation is unchanged when test candidates are shuffled") {
    const auto test_set = generate_instances(888, 400);
    ModelConfig config = ModelConfig::variant(ModelVariant::contrast_cl, 2);
    ParameterStore params = build_parameters(config);
    const EvalResult base = evaluate(params, config, test_set, 2);

    Rng rng(12);
    std::vector<ProblemInstance> shuffled;
    shuffled.reserve(test_set.size());
    for (const auto& inst : test_set) {
        std::vector<int> p{0, 1, 2, 3, 4, 5, 6, 7};
        rng.shuffle(p);
        std::array<int, 8> perm;
        std::copy(p.begin(), p.end(), perm.begin());
        shuffled.push_back(with_candidates_permuted(inst, perm));
    }
    const EvalResult moved = evaluate(params, config, shuffled, 2);
    CHECK(moved.accuracy == base.accuracy);
    CHECK(moved.correct == base.correct);
}

TEST_CASE("size sweep rejects degenerate sizes and keeps subsets nested") {
    const auto pool = generate_instances(55, 40);
    TrainConfig cfg = small_config(1);
    CHECK_THROWS_AS(size_sweep(cfg, {0, 10}, {1}, pool, {}, {}), std::invalid_argument);
    CHECK_THROWS_AS(size_sweep(cfg, {10, 10}, {1}, pool, {}, {}), std::invalid_argument);
    CHECK_THROWS_AS(size_sweep(cfg, {10, 40, 30}, {1}, pool, {}, {}), std::invalid_argument);
    CHECK_THROWS_AS(size_sweep(cfg, {10, 100}, {1}, pool, {}, {}), std::invalid_argument);

    // prefix discipline: the order is fixed per seed, so any size-k subset
    // is the head of the size-m one for k < m
    const auto order1 = sweep_order(1, 40);
    const auto order2 = sweep_order(1, 40);
    CHECK(order1 == order2);
    CHECK(order1.size() == 40);
    std::vector<size_t> sorted = order1;
    std::sort(sorted.begin(), sorted.end());
    for (size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
}

TEST_CASE("invariance audit passes on the real model and fails on the tagged mutant") {
    const auto data = generate_instances(404, 50);
    ModelConfig config = ModelConfig::variant(ModelVariant::full, 15);
    ParameterStore params = build_parameters(config);

    const AuditReport ok = invariance_audit(params, config, data, 100, 9, 2);
    CHECK(ok.passed());
    CHECK(ok.max_deviation == 0.0);
    CHECK(ok.instances_checked == 100);
    CHECK(ok.comparisons == 300);

    ModelConfig tagged = config;
    tagged.position_tagged = true;
    const AuditReport bad = invariance_audit(params, tagged, data, 20, 9, 2);
    CHECK(!bad.passed());
    CHECK(bad.max_deviation > 0.0);

    const AuditReport empty = invariance_audit(params, config, {}, 100, 9);
    CHECK(empty.passed());
    CHECK(empty.instances_checked == 0);
}

TEST_CASE("binomial tail p-values behave") {
    CHECK(binomial_tail_pvalue(10, 0, 0.5) == 1.0);
    CHECK(binomial_tail_pvalue(10, 11, 0.5) == 0.0);
    CHECK(binomial_tail_pvalue(1000, 125, 0.125) > 0.4);
    CHECK(binomial_tail_pvalue(1000, 125, 0.125) < 0.6);
    CHECK(binomial_tail_pvalue(1000, 160, 0.125) < 0.01);
    // monotone in k
    CHECK(binomial_tail_pvalue(100, 20, 0.125) < binomial_tail_pvalue(100, 10, 0.125));
}

TEST_CASE("run report json carries the per-rule breakdown") {
    const auto test_set = generate_instances(12, 64);
    TrainConfig cfg = small_config(2);
    cfg.max_epochs = 1;
    const TrainOutcome out = train(cfg, generate_instances(10, 32), {}, test_set);
    const std::string j = out.report.to_json();
    CHECK(j.find("test_accuracy_by_rule") != std::string::npos);
    CHECK(j.find("distribute_three") != std::string::npos);
    CHECK(j.find("rule_agreement") != std::string::npos);
    CHECK(j.find("\"wall_clock_seconds\": 0.0") != std::string::npos);
}
