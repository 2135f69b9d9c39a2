#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "copi/gradcheck.hpp"
#include "copi/model.hpp"
#include "copi/puzzle.hpp"

using namespace copi;

namespace {

ProblemInstance swap_rows01(const ProblemInstance& inst) { return with_rows01_swapped(inst); }
ProblemInstance swap_cols01(const ProblemInstance& inst) { return with_cols01_swapped(inst); }
ProblemInstance permute_candidates(const ProblemInstance& inst, const std::array<int, 8>& perm) {
    return with_candidates_permuted(inst, perm);
}

std::vector<double> potentials_of(const ProblemInstance& inst, const ParameterStore& params,
                                  const ModelConfig& config) {
    Tape tape;
    tape.recording = false;
    Rng rng(0);
    return forward_potentials(tape, inst, params, config, rng).potentials->values;
}

// Plain-loop replay of the encoder, independent of the tape machinery.
std::vector<double> replay_encode(const std::array<Panel, 8>& context, const Panel& candidate,
                                  const ParameterStore& p) {
    auto affine = [&](const std::vector<double>& x, const std::string& w_name,
                      const std::string& b_name) {
        const auto w = p.get(w_name);
        const auto b = p.get(b_name);
        std::vector<double> y(b->values);
        for (size_t i = 0; i < x.size(); ++i)
            for (int j = 0; j < w->shape[1]; ++j)
                y[j] += x[i] * w->values[i * w->shape[1] + j];
        return y;
    };
    auto norm = [](std::vector<double> v) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= v.size();
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        var /= v.size();
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (auto& x : v) x = (x - mean) * inv;
        return v;
    };
    auto embed = [&](const Panel& panel) {
        std::vector<double> x(kPanelPixels);
        for (int i = 0; i < kPanelPixels; ++i) x[i] = panel.pixels[i] / 255.0;
        auto h = norm(affine(x, "enc.emb.w1", "enc.emb.b1"));
        for (auto& v : h) v = std::max(v, 0.0);
        auto e = norm(affine(h, "enc.emb.w2", "enc.emb.b2"));
        for (auto& v : e) v = std::max(v, 0.0);
        return e;
    };
    std::vector<std::vector<double>> e(9);
    for (int i = 0; i < 8; ++i) e[i] = embed(context[i]);
    e[8] = embed(candidate);
    auto vsum = [](std::initializer_list<const std::vector<double>*> vs) {
        std::vector<double> out(**vs.begin());
        bool first = true;
        for (const auto* v : vs) {
            if (first) {
                first = false;
                continue;
            }
            for (size_t i = 0; i < out.size(); ++i) out[i] += (*v)[i];
        }
        return out;
    };
    auto comb = [&](std::initializer_list<const std::vector<double>*> vs) {
        auto r = norm(affine(vsum(vs), "enc.comb.w", "enc.comb.b"));
        for (auto& v : r) v = std::max(v, 0.0);
        return r;
    };
    auto r0 = comb({&e[0], &e[1], &e[2]});
    auto r1 = comb({&e[3], &e[4], &e[5]});
    auto r2 = comb({&e[6], &e[7], &e[8]});
    auto c0 = comb({&e[0], &e[3], &e[6]});
    auto c1 = comb({&e[1], &e[4], &e[7]});
    auto c2 = comb({&e[2], &e[5], &e[8]});
    auto total = vsum({&r0, &r1, &r2, &c0, &c1, &c2});
    return affine(total, "enc.lat.w", "enc.lat.b");
}

void randomize_biases(ParameterStore& p, uint64_t seed) {
    Rng rng(seed);
    uint64_t tag = 1000;
    for (const auto& [name, t] : p.entries()) {
        if (t->shape.size() != 1) continue;
        Rng stream = rng.split(tag++);
        for (auto& v : t->values) v = stream.uniform(-0.5, 0.5);
    }
}

}  // namespace

TEST_CASE("model config serializes and parses back") {
    ModelConfig c = ModelConfig::variant(ModelVariant::full, 41);
    c.tau = 0.37;
    c.baseline_b = -1.25;
    c.sampling = SamplingMode::gumbel_hard;
    const ModelConfig back = ModelConfig::parse(c.serialize());
    CHECK(back.feature_dim == c.feature_dim);
    CHECK(back.repetitions == c.repetitions);
    CHECK(back.loss == c.loss);
    CHECK(back.sampling == c.sampling);
    CHECK(back.tau == c.tau);
    CHECK(back.baseline_b == c.baseline_b);
    CHECK(back.use_contrast == c.use_contrast);
    CHECK(back.use_inference == c.use_inference);
    CHECK(back.seed == c.seed);

    CHECK_THROWS_AS(ModelConfig::parse("nonsense=1\n"), std::invalid_argument);
    CHECK_THROWS_AS(ModelConfig::parse("tau=0\n"), std::invalid_argument);
}

TEST_CASE("encoder is bitwise invariant to row and column swaps") {
    const auto inst = generate_instance(7001);
    ModelConfig config = ModelConfig::variant(ModelVariant::full, 3);
    ParameterStore params = build_parameters(config);
    randomize_biases(params, 11);

    Tape tape;
    tape.recording = false;
    const auto base = encode_pair(tape, inst.context, inst.candidates[0], params, config);
    const auto rows = encode_pair(tape, swap_rows01(inst).context, inst.candidates[0], params, config);
    const auto cols = encode_pair(tape, swap_cols01(inst).context, inst.candidates[0], params, config);
    REQUIRE(base->size() == config.feature_dim);
    for (int i = 0; i < config.feature_dim; ++i) {
        CHECK(rows->values[i] == base->values[i]);
        CHECK(cols->values[i] == base->values[i]);
    }
}

TEST_CASE("encoder matches an independent plain-loop replay") {
    ModelConfig config = ModelConfig::variant(ModelVariant::full, 5);
    ParameterStore params = build_parameters(config);
    randomize_biases(params, 21);

    // all-zero panels reduce to latent(6 * combiner(relu stack at 0))
    {
        std::array<Panel, 8> zero_ctx{};
        Panel zero_cand{};
        Tape tape;
        tape.recording = false;
        const auto got = encode_pair(tape, zero_ctx, zero_cand, params, config);
        const auto want = replay_encode(zero_ctx, zero_cand, params);
        for (int i = 0; i < config.feature_dim; ++i)
            CHECK(got->values[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
    // and a real instance checks row/column wiring end to end
    {
        const auto inst = generate_instance(313);
        Tape tape;
        tape.recording = false;
        const auto got = encode_pair(tape, inst.context, inst.candidates[3], params, config);
        const auto want = replay_encode(inst.context, inst.candidates[3], params);
        for (int i = 0; i < config.feature_dim; ++i)
            CHECK(got->values[i] == doctest::Approx(want[i]).epsilon(1e-9));
    }
}

TEST_CASE("contrast module arithmetic on fixed summaries") {
    // h fixed to 0.5*I, normalization bypassed: outputs are F - 0.5*sum(F)
    {
        Tape t;
        auto f = Tensor::from({2, 2}, {1.0, 1.0, 3.0, 3.0});
        auto w = Tensor::from({2, 2}, {0.5, 0.0, 0.0, 0.5});
        auto b = Tensor::from({2}, {0.0, 0.0});
        auto out = contrast_module(t, f, nullptr, w, b, /*apply_normalize=*/false);
        CHECK(out->values[0] == -1.0);
        CHECK(out->values[1] == -1.0);
        CHECK(out->values[2] == 1.0);
        CHECK(out->values[3] == 1.0);
    }
    // identical candidates with h = (1/8)*I vanish entirely
    {
        Tape t;
        std::vector<double> vals;
        for (int i = 0; i < 8; ++i) {
            vals.push_back(0.75);
            vals.push_back(-2.5);
        }
        auto f = Tensor::from({8, 2}, vals);
        auto w = Tensor::from({2, 2}, {0.125, 0.0, 0.0, 0.125});
        auto b = Tensor::from({2}, {0.0, 0.0});
        auto out = contrast_module(t, f, nullptr, w, b, /*apply_normalize=*/false);
        for (double v : out->values) CHECK(v == 0.0);
    }
}

TEST_CASE("contrast module is equivariant to candidate order") {
    Rng rng(8);
    Tape t;
    std::vector<double> vals(8 * 3);
    for (auto& v : vals) v = rng.uniform(-2.0, 2.0);
    auto f = Tensor::from({8, 3}, vals);
    std::vector<double> wv(5 * 3);
    for (auto& v : wv) v = rng.uniform(-1.0, 1.0);
    auto w = Tensor::from({5, 3}, wv);
    auto b = Tensor::from({3}, {0.1, -0.2, 0.3});
    auto emb = Tensor::from({2}, {0.5, -0.5});
    const auto base = contrast_module(t, f, emb, w, b)->values;

    std::array<int, 8> perm{5, 2, 7, 0, 3, 6, 1, 4};
    std::vector<double> pv(8 * 3);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 3; ++j) pv[i * 3 + j] = vals[perm[i] * 3 + j];
    auto fp = Tensor::from({8, 3}, pv);
    const auto permuted = contrast_module(t, fp, emb, w, b)->values;
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 3; ++j) CHECK(permuted[i * 3 + j] == base[perm[i] * 3 + j]);
}

TEST_CASE("inference branch: uniform at zero head, invariant, candidate-isolated") {
    const auto inst = generate_instance(909);
    ModelConfig config = ModelConfig::variant(ModelVariant::full, 17);
    ParameterStore params = build_parameters(config);

    // zero final affines give the uniform posterior
    for (int a = 0; a < kNumAttributes; ++a) {
        auto w = params.get("inf.head" + std::to_string(a) + ".w");
        std::fill(w->values.begin(), w->values.end(), 0.0);
    }
    {
        Tape tape;
        tape.recording = false;
        const auto dist = infer_rule_distribution(tape, inst, params, config);
        for (const auto& d : dist)
            for (double v : d->values) CHECK(v == 0.25);
    }

    randomize_biases(params, 5);
    Rng reinit(33);
    params.init_uniform(reinit);
    Tape tape;
    tape.recording = false;
    const auto base = infer_rule_distribution(tape, inst, params, config);

    const auto swapped = infer_rule_distribution(tape, swap_rows01(inst), params, config);
    for (int a = 0; a < kNumAttributes; ++a)
        CHECK(swapped[a]->values == base[a]->values);

    // blanking every candidate cannot change a context-only computation
    ProblemInstance blanked = inst;
    for (auto& c : blanked.candidates) c.pixels.fill(0);
    const auto isolated = infer_rule_distribution(tape, blanked, params, config);
    for (int a = 0; a < kNumAttributes; ++a)
        CHECK(isolated[a]->values == base[a]->values);
}

TEST_CASE("sample_rules: soft identity, hard one-hot frequencies, tau guard") {
    ModelConfig config = ModelConfig::variant(ModelVariant::full, 0);
    Tape t;
    std::array<TensorPtr, kNumAttributes> dist;
    for (int a = 0; a < kNumAttributes; ++a)
        dist[a] = Tensor::from({kNumRules}, {0.1, 0.2, 0.3, 0.4});

    Rng rng(4);
    const auto soft = sample_rules(t, dist, config, rng);
    for (int a = 0; a < kNumAttributes; ++a) CHECK(soft[a] == dist[a]);

    config.sampling = SamplingMode::gumbel_hard;
    config.tau = 0.1;
    // posterior from logits [10,0,0,0]
    std::vector<double> p = candidate_distribution({10.0, 0.0, 0.0, 0.0});
    for (int a = 0; a < kNumAttributes; ++a) dist[a] = Tensor::from({kNumRules}, p);
    int hits = 0;
    for (int i = 0; i < 1000; ++i) {
        Tape tape;
        const auto hard = sample_rules(tape, dist, config, rng);
        double sum = 0.0;
        for (double v : hard[0]->values) {
            CHECK((v == 0.0 || v == 1.0));
            sum += v;
        }
        CHECK(sum == 1.0);
        if (hard[0]->values[0] == 1.0) ++hits;
    }
    CHECK(hits >= 990);

    config.tau = 0.0;
    Rng rng2(9);
    CHECK_THROWS_AS(sample_rules(t, dist, config, rng2), std::invalid_argument);
}

TEST_CASE("potentials are candidate-equivariant and context-invariant, bitwise") {
    const auto inst = generate_instance(24);
    for (auto variant : {ModelVariant::backbone_xe, ModelVariant::contrast_xe,
                         ModelVariant::contrast_cl, ModelVariant::full}) {
        ModelConfig config = ModelConfig::variant(variant, 99);
        ParameterStore params = build_parameters(config);
        randomize_biases(params, 3);

        const auto base = potentials_of(inst, params, config);
        const auto rerun = potentials_of(inst, params, config);
        CHECK(base == rerun);  // determinism, soft path

        CHECK(potentials_of(swap_rows01(inst), params, config) == base);
        CHECK(potentials_of(swap_cols01(inst), params, config) == base);

        const std::array<int, 8> perm{3, 6, 0, 7, 2, 5, 1, 4};
        const auto shuffled = potentials_of(permute_candidates(inst, perm), params, config);
        for (int i = 0; i < 8; ++i) CHECK(shuffled[i] == base[perm[i]]);
    }
}

TEST_CASE("position-tagged mutant breaks invariance") {
    const auto inst = generate_instance(25);
    ModelConfig config = ModelConfig::variant(ModelVariant::full, 12);
    config.position_tagged = true;
    ParameterStore params = build_parameters(config);
    const auto base = potentials_of(inst, params, config);
    const auto swapped = potentials_of(swap_rows01(inst), params, config);
    double dev = 0.0;
    for (int i = 0; i < 8; ++i) dev = std::max(dev, std::fabs(swapped[i] - base[i]));
    CHECK(dev > 0.0);
}

TEST_CASE("contrast loss closed-form values and gradients") {
    ModelConfig config;
    config.baseline_b = 0.0;

    // all potentials at the baseline
    {
        Tape t;
        auto p = Tensor::from({8}, std::vector<double>(8, 0.0), /*requires_grad=*/true);
        auto loss = contrast_loss(t, p, 2, config);
        CHECK(std::fabs(loss->values[0] - 8.0 * std::log(2.0)) <= 1e-6);
        CHECK(loss->values[0] == doctest::Approx(5.545177).epsilon(1e-6));
        t.backward(loss);
        for (int i = 0; i < 8; ++i) CHECK(p->grad[i] == (i == 2 ? -0.5 : 0.5));
    }
    // well separated: correct at b+10, wrong at b-10
    {
        Tape t;
        std::vector<double> v(8, -10.0);
        v[5] = 10.0;
        auto p = Tensor::from({8}, v);
        auto loss = contrast_loss(t, p, 5, config);
        const double expected = 8.0 * std::log1p(std::exp(-10.0));
        CHECK(loss->values[0] == doctest::Approx(expected).epsilon(1e-9));
        CHECK(loss->values[0] == doctest::Approx(3.632e-4).epsilon(1e-3));
    }
    // nonzero constant baseline shifts the fixed point
    {
        Tape t;
        config.baseline_b = 1.5;
        auto p = Tensor::from({8}, std::vector<double>(8, 1.5));
        auto loss = contrast_loss(t, p, 0, config);
        CHECK(std::fabs(loss->values[0] - 8.0 * std::log(2.0)) <= 1e-12);
    }
    {
        Tape t;
        auto p = Tensor::from({8}, std::vector<double>(8, 0.0));
        CHECK_THROWS_AS(contrast_loss(t, p, 8, config), std::invalid_argument);
    }
}

TEST_CASE("cross entropy closed-form values") {
    Tape t;
    auto uniform = Tensor::from({8}, std::vector<double>(8, 3.25));
    CHECK(std::fabs(cross_entropy_loss(t, uniform, 4)->values[0] - std::log(8.0)) <= 1e-6);

    std::vector<double> sat(8, 0.0);
    sat[1] = 30.0;
    CHECK(cross_entropy_loss(t, Tensor::from({8}, sat), 1)->values[0] < 1e-12);

    std::vector<double> v{0.3, -1.0, 2.5, 0.0, 0.7, -0.4, 1.1, 0.2};
    const double base = cross_entropy_loss(t, Tensor::from({8}, v), 2)->values[0];
    for (auto& x : v) x += 7.25;
    const double shifted = cross_entropy_loss(t, Tensor::from({8}, v), 2)->values[0];
    CHECK(std::fabs(base - shifted) <= 1e-9);

    CHECK_THROWS_AS(cross_entropy_loss(t, uniform, -1), std::invalid_argument);
}

TEST_CASE("predict and candidate distribution basics") {
    CHECK(predict(std::vector<double>{1, 2, 3, 0, 0, 0, 0, 0}) == 2);
    CHECK(predict(std::vector<double>(8, 4.2)) == 0);  // ties to lowest index

    const std::vector<double> pots{0.3, -1.0, 2.5, 0.0, 0.7, -0.4, 1.1, 0.2};
    std::vector<double> monotone = pots;
    for (auto& v : monotone) v = 3.0 * v + 11.0;
    CHECK(predict(monotone) == predict(pots));

    const auto dist = candidate_distribution(pots);
    double sum = 0.0;
    for (double v : dist) sum += v;
    CHECK(std::fabs(sum - 1.0) <= 1e-12);
    const auto uniform = candidate_distribution(std::vector<double>(8, -3.0));
    for (double v : uniform) CHECK(v == doctest::Approx(0.125).epsilon(1e-15));
    std::vector<double> shifted = pots;
    for (auto& v : shifted) v += 123.0;
    const auto dist2 = candidate_distribution(shifted);
    for (int i = 0; i < 8; ++i) CHECK(dist2[i] == doctest::Approx(dist[i]).epsilon(1e-12));
}

TEST_CASE("full model gradient matches central differences") {
    const auto instances = generate_instances(5150, 3);
    for (auto variant : {ModelVariant::full, ModelVariant::contrast_xe}) {
        ModelConfig config = ModelConfig::variant(variant, 1234);
        ParameterStore params = build_parameters(config);
        for (const auto& inst : instances) {
            const double err = finite_difference_gradcheck(
                params,
                [&](Tape& t) {
                    Rng rng(0);
                    auto fwd = forward_potentials(t, inst, params, config, rng);
                    return instance_loss(t, fwd.potentials, inst.answer_index, config);
                },
                {.eps = 1e-4, .samples_per_param = 4, .seed = 77});
            CHECK(err < 1e-3);
        }
    }
}
