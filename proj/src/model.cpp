#include "copi/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace copi {

namespace {

constexpr double kPositionTagStep = 0.012;

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

TensorPtr affine_vec(Tape& t, const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
    auto m = reshape(t, x, {1, x->shape[0]});
    auto y = add_row(t, matmul(t, m, w), b);
    return reshape(t, y, {w->shape[1]});
}

struct EncoderRefs {
    TensorPtr w1, b1, w2, b2, comb_w, comb_b, lat_w, lat_b;
};

EncoderRefs encoder_refs(const ParameterStore& p, const std::string& prefix) {
    return EncoderRefs{p.get(prefix + ".emb.w1"), p.get(prefix + ".emb.b1"),
                       p.get(prefix + ".emb.w2"), p.get(prefix + ".emb.b2"),
                       p.get(prefix + ".comb.w"), p.get(prefix + ".comb.b"),
                       p.get(prefix + ".lat.w"),  p.get(prefix + ".lat.b")};
}

TensorPtr embed_matrix(Tape& t, const TensorPtr& pixels, const EncoderRefs& e) {
    auto h = relu(t, add_row(t, matmul(t, pixels, e.w1), e.b1));
    return relu(t, add_row(t, matmul(t, h, e.w2), e.b2));
}

TensorPtr position_tag(Tape& t, const TensorPtr& embedding, int position) {
    auto tag = Tensor::make(embedding->shape);
    for (auto& v : tag->values) v = kPositionTagStep * (position + 1);
    return add(t, embedding, tag);
}

/// Row/column feature: affine over the canonical member sum, rectified.
/// The relu keeps row and column structure visible downstream; a purely
/// affine combiner would collapse the six partial sums into one
/// bag-of-panels term.
TensorPtr combine(Tape& t, const EncoderRefs& e, std::vector<TensorPtr> members) {
    return relu(t, affine_vec(t, canonical_sum(t, members), e.comb_w, e.comb_b));
}

/// Context panels occupy grid cells (0,0)..(2,1) in index order; the
/// candidate completes (2,2). Rows and columns are therefore
/// {0,1,2},{3,4,5},{6,7,cand} and {0,3,6},{1,4,7},{2,5,cand}.
TensorPtr pair_feature(Tape& t, const std::array<TensorPtr, 8>& ctx, const TensorPtr& cand,
                       const EncoderRefs& e) {
    auto r0 = combine(t, e, {ctx[0], ctx[1], ctx[2]});
    auto r1 = combine(t, e, {ctx[3], ctx[4], ctx[5]});
    auto r2 = combine(t, e, {ctx[6], ctx[7], cand});
    auto c0 = combine(t, e, {ctx[0], ctx[3], ctx[6]});
    auto c1 = combine(t, e, {ctx[1], ctx[4], ctx[7]});
    auto c2 = combine(t, e, {ctx[2], ctx[5], cand});
    std::vector<TensorPtr> rows{r0, r1, r2}, cols{c0, c1, c2};
    auto total = add(t, canonical_sum(t, rows), canonical_sum(t, cols));
    return affine_vec(t, total, e.lat_w, e.lat_b);
}

TensorPtr residual_block(Tape& t, const ParameterStore& p, const TensorPtr& x, int index) {
    const std::string prefix = "res" + std::to_string(index);
    auto h1 = relu(t, add_row(t, matmul(t, x, p.get(prefix + ".w1")), p.get(prefix + ".b1")));
    auto h2 = relu(t, add_row(t, matmul(t, h1, p.get(prefix + ".w2")), p.get(prefix + ".b2")));
    return add(t, x, h2);
}

TensorPtr pixels_to_tensor(const Panel* const* panels, int count) {
    auto m = Tensor::make({count, kPanelPixels});
    for (int i = 0; i < count; ++i)
        for (int j = 0; j < kPanelPixels; ++j)
            m->values[static_cast<size_t>(i) * kPanelPixels + j] =
                panels[i]->pixels[j] / 255.0;
    return m;
}

}  // namespace

const char* variant_name(ModelVariant v) {
    switch (v) {
        case ModelVariant::backbone_xe: return "backbone_xe";
        case ModelVariant::contrast_xe: return "contrast_xe";
        case ModelVariant::contrast_cl: return "contrast_cl";
        case ModelVariant::full: return "full";
    }
    return "?";
}

ModelVariant variant_from_name(const std::string& name) {
    if (name == "backbone_xe") return ModelVariant::backbone_xe;
    if (name == "contrast_xe") return ModelVariant::contrast_xe;
    if (name == "contrast_cl") return ModelVariant::contrast_cl;
    if (name == "full") return ModelVariant::full;
    throw std::invalid_argument("unknown model variant: " + name);
}

ModelConfig ModelConfig::variant(ModelVariant v, uint64_t seed) {
    ModelConfig c;
    c.seed = seed;
    switch (v) {
        case ModelVariant::backbone_xe:
            c.use_contrast = false;
            c.use_inference = false;
            c.loss = LossMode::cross_entropy;
            break;
        case ModelVariant::contrast_xe:
            c.use_inference = false;
            c.loss = LossMode::cross_entropy;
            break;
        case ModelVariant::contrast_cl:
            c.use_inference = false;
            c.loss = LossMode::contrast;
            break;
        case ModelVariant::full:
            break;
    }
    return c;
}

std::string ModelConfig::serialize() const {
    std::ostringstream out;
    out << "feature_dim=" << feature_dim << "\n";
    out << "repetitions=" << repetitions << "\n";
    out << "loss=" << (loss == LossMode::contrast ? "contrast" : "cross_entropy") << "\n";
    out << "sampling=" << (sampling == SamplingMode::soft ? "soft" : "gumbel_hard") << "\n";
    out << "tau=" << fmt_double(tau) << "\n";
    out << "baseline_b=" << fmt_double(baseline_b) << "\n";
    out << "contrast=" << (use_contrast ? "true" : "false") << "\n";
    out << "inference=" << (use_inference ? "true" : "false") << "\n";
    out << "seed=" << seed << "\n";
    return out.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
    ModelConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("model config line " + std::to_string(lineno) +
                                        ": expected key=value, got '" + line + "'");
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "feature_dim") c.feature_dim = std::stoi(value);
        else if (key == "repetitions") c.repetitions = std::stoi(value);
        else if (key == "loss") {
            if (value == "contrast") c.loss = LossMode::contrast;
            else if (value == "cross_entropy") c.loss = LossMode::cross_entropy;
            else throw std::invalid_argument("model config: unknown loss '" + value + "'");
        } else if (key == "sampling") {
            if (value == "soft") c.sampling = SamplingMode::soft;
            else if (value == "gumbel_hard") c.sampling = SamplingMode::gumbel_hard;
            else throw std::invalid_argument("model config: unknown sampling '" + value + "'");
        } else if (key == "tau") c.tau = std::stod(value);
        else if (key == "baseline_b") c.baseline_b = std::stod(value);
        else if (key == "contrast") c.use_contrast = value == "true";
        else if (key == "inference") c.use_inference = value == "true";
        else if (key == "seed") c.seed = std::stoull(value);
        else throw std::invalid_argument("model config: unknown key '" + key + "'");
    }
    if (c.feature_dim <= 0 || c.repetitions <= 0)
        throw std::invalid_argument("model config: feature_dim and repetitions must be positive");
    if (!(c.tau > 0.0)) throw std::invalid_argument("model config: tau must be positive");
    if (!std::isfinite(c.baseline_b))
        throw std::invalid_argument("model config: baseline_b must be finite");
    return c;
}

ModelConfig ModelConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open model config " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

void ModelConfig::save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << serialize();
}

ParameterStore build_parameters(const ModelConfig& config) {
    const int d = config.feature_dim;
    ParameterStore p;
    auto encoder = [&](const std::string& prefix) {
        p.add(prefix + ".emb.w1", {kPanelPixels, kEmbedHidden});
        p.add(prefix + ".emb.b1", {kEmbedHidden});
        p.add(prefix + ".emb.w2", {kEmbedHidden, d});
        p.add(prefix + ".emb.b2", {d});
        p.add(prefix + ".comb.w", {d, d});
        p.add(prefix + ".comb.b", {d});
        p.add(prefix + ".lat.w", {d, d});
        p.add(prefix + ".lat.b", {d});
    };
    encoder("enc");
    if (config.use_contrast) {
        const int h_in = d + (config.use_inference ? kNumAttributes * kRuleEmbedWidth : 0);
        for (int r = 0; r < config.repetitions; ++r) {
            p.add("con" + std::to_string(r) + ".w", {h_in, d});
            p.add("con" + std::to_string(r) + ".b", {d});
        }
    }
    for (int r = 0; r < config.repetitions; ++r) {
        const std::string prefix = "res" + std::to_string(r);
        p.add(prefix + ".w1", {d, d});
        p.add(prefix + ".b1", {d});
        p.add(prefix + ".w2", {d, d});
        p.add(prefix + ".b2", {d});
    }
    p.add("head.w1", {d, d});
    p.add("head.b1", {d});
    p.add("head.w2", {d, 1});
    p.add("head.b2", {1});
    if (config.use_inference) {
        encoder("inf");
        for (int a = 0; a < kNumAttributes; ++a) {
            p.add("inf.head" + std::to_string(a) + ".w", {d, kNumRules});
            p.add("inf.head" + std::to_string(a) + ".b", {kNumRules});
        }
        p.add("rules.embed", {kNumAttributes * kNumRules, kRuleEmbedWidth});
    }
    Rng rng(config.seed ^ 0x5eedf00dULL);
    p.init_uniform(rng);
    return p;
}

TensorPtr panel_matrix(const ProblemInstance& inst) {
    const Panel* panels[16];
    for (int i = 0; i < 8; ++i) panels[i] = &inst.context[i];
    for (int i = 0; i < 8; ++i) panels[8 + i] = &inst.candidates[i];
    return pixels_to_tensor(panels, 16);
}

TensorPtr context_matrix(const ProblemInstance& inst) {
    const Panel* panels[8];
    for (int i = 0; i < 8; ++i) panels[i] = &inst.context[i];
    return pixels_to_tensor(panels, 8);
}

TensorPtr encode_pair(Tape& tape, const std::array<Panel, 8>& context, const Panel& candidate,
                      const ParameterStore& params, const ModelConfig& config) {
    const Panel* panels[9];
    for (int i = 0; i < 8; ++i) panels[i] = &context[i];
    panels[8] = &candidate;
    const EncoderRefs enc = encoder_refs(params, "enc");
    auto embedded = embed_matrix(tape, pixels_to_tensor(panels, 9), enc);
    std::array<TensorPtr, 8> ctx;
    for (int i = 0; i < 8; ++i) {
        ctx[i] = row(tape, embedded, i);
        if (config.position_tagged) ctx[i] = position_tag(tape, ctx[i], i);
    }
    auto cand = row(tape, embedded, 8);
    if (config.position_tagged) cand = position_tag(tape, cand, 8);
    return pair_feature(tape, ctx, cand, enc);
}

TensorPtr encode_candidates(Tape& tape, const ProblemInstance& inst,
                            const ParameterStore& params, const ModelConfig& config) {
    const EncoderRefs enc = encoder_refs(params, "enc");
    auto embedded = embed_matrix(tape, panel_matrix(inst), enc);
    std::array<TensorPtr, 8> ctx;
    for (int i = 0; i < 8; ++i) {
        ctx[i] = row(tape, embedded, i);
        if (config.position_tagged) ctx[i] = position_tag(tape, ctx[i], i);
    }
    std::vector<TensorPtr> feats;
    feats.reserve(8);
    for (int j = 0; j < 8; ++j) {
        auto cand = row(tape, embedded, 8 + j);
        // The mutant tags candidates by presentation slot, which is exactly
        // what a permutation-invariant model must not do.
        if (config.position_tagged) cand = position_tag(tape, cand, 9 + j);
        feats.push_back(pair_feature(tape, ctx, cand, enc));
    }
    return stack_rows(tape, feats);
}

TensorPtr contrast_module(Tape& tape, const TensorPtr& features, const TensorPtr& rule_embed,
                          const TensorPtr& h_weight, const TensorPtr& h_bias,
                          bool apply_normalize) {
    auto common = canonical_row_sum(tape, features);
    TensorPtr h_in = common;
    if (rule_embed != nullptr) {
        std::vector<TensorPtr> parts{common, rule_embed};
        h_in = concat(tape, parts);
    }
    if (apply_normalize) h_in = normalize(tape, h_in);
    auto summary = affine_vec(tape, h_in, h_weight, h_bias);
    auto contrasted = sub_row(tape, features, summary);
    // Common features cancel in the subtraction; renormalizing over the
    // candidate-set and feature axes restores the residuals to unit scale
    // so the discriminative signal survives the depth.
    return apply_normalize ? normalize_block(tape, contrasted) : contrasted;
}

std::array<TensorPtr, kNumAttributes> infer_rule_distribution(Tape& tape,
                                                              const ProblemInstance& inst,
                                                              const ParameterStore& params,
                                                              const ModelConfig& config) {
    if (!config.use_inference)
        throw std::logic_error("infer_rule_distribution: inference branch disabled");
    const EncoderRefs enc = encoder_refs(params, "inf");
    auto embedded = embed_matrix(tape, context_matrix(inst), enc);
    std::array<TensorPtr, 8> ctx;
    for (int i = 0; i < 8; ++i) ctx[i] = row(tape, embedded, i);
    auto r0 = combine(tape, enc, {ctx[0], ctx[1], ctx[2]});
    auto r1 = combine(tape, enc, {ctx[3], ctx[4], ctx[5]});
    auto r2 = combine(tape, enc, {ctx[6], ctx[7]});
    auto c0 = combine(tape, enc, {ctx[0], ctx[3], ctx[6]});
    auto c1 = combine(tape, enc, {ctx[1], ctx[4], ctx[7]});
    auto c2 = combine(tape, enc, {ctx[2], ctx[5]});
    std::vector<TensorPtr> rows{r0, r1, r2}, cols{c0, c1, c2};
    auto total = add(tape, canonical_sum(tape, rows), canonical_sum(tape, cols));
    auto latent = affine_vec(tape, total, enc.lat_w, enc.lat_b);
    std::array<TensorPtr, kNumAttributes> dist;
    for (int a = 0; a < kNumAttributes; ++a) {
        const std::string prefix = "inf.head" + std::to_string(a);
        dist[a] = softmax(tape, affine_vec(tape, latent, params.get(prefix + ".w"),
                                           params.get(prefix + ".b")));
    }
    return dist;
}

std::array<TensorPtr, kNumAttributes> sample_rules(
    Tape& tape, const std::array<TensorPtr, kNumAttributes>& dist, const ModelConfig& config,
    Rng& rng) {
    if (config.sampling == SamplingMode::soft) return dist;
    if (!(config.tau > 0.0)) throw std::invalid_argument("sample_rules: tau must be positive");
    std::array<TensorPtr, kNumAttributes> out;
    for (int a = 0; a < kNumAttributes; ++a) {
        auto floor_eps = Tensor::make(dist[a]->shape);
        for (auto& v : floor_eps->values) v = 1e-30;
        auto logits = log(tape, add(tape, dist[a], floor_eps));
        auto gumbel = Tensor::make(dist[a]->shape);
        for (auto& g : gumbel->values) {
            const double u = std::clamp(rng.next_double(), 1e-12, 1.0 - 1e-12);
            g = -std::log(-std::log(u));
        }
        auto relaxed = softmax(tape, scale(tape, add(tape, logits, gumbel), 1.0 / config.tau));
        size_t best = 0;
        for (size_t i = 1; i < relaxed->values.size(); ++i)
            if (relaxed->values[i] > relaxed->values[best]) best = i;
        auto hard = Tensor::make(relaxed->shape);
        hard->values[best] = 1.0;
        out[a] = straight_through(tape, relaxed, hard);
    }
    return out;
}

TensorPtr rule_embedding(Tape& tape, const std::array<TensorPtr, kNumAttributes>& sampled,
                         const ParameterStore& params) {
    auto table = params.get("rules.embed");
    std::vector<TensorPtr> parts;
    parts.reserve(kNumAttributes);
    for (int a = 0; a < kNumAttributes; ++a) {
        auto block = slice_rows(tape, table, a * kNumRules, (a + 1) * kNumRules);
        auto weights = reshape(tape, sampled[a], {1, kNumRules});
        parts.push_back(reshape(tape, matmul(tape, weights, block), {kRuleEmbedWidth}));
    }
    return concat(tape, parts);
}

ForwardResult forward_potentials(Tape& tape, const ProblemInstance& inst,
                                 const ParameterStore& params, const ModelConfig& config,
                                 Rng& rng) {
    ForwardResult result;
    TensorPtr rule_embed;
    if (config.use_inference) {
        result.rule_distribution = infer_rule_distribution(tape, inst, params, config);
        result.sampled_rules = sample_rules(tape, *result.rule_distribution, config, rng);
        rule_embed = rule_embedding(tape, *result.sampled_rules, params);
    }
    auto features = encode_candidates(tape, inst, params, config);
    for (int r = 0; r < config.repetitions; ++r) {
        if (config.use_contrast) {
            const std::string prefix = "con" + std::to_string(r);
            features = contrast_module(tape, features, rule_embed, params.get(prefix + ".w"),
                                       params.get(prefix + ".b"));
        }
        features = residual_block(tape, params, features, r);
    }
    auto hidden = relu(tape, add_row(tape, matmul(tape, features, params.get("head.w1")),
                                     params.get("head.b1")));
    auto scores = add_row(tape, matmul(tape, hidden, params.get("head.w2")), params.get("head.b2"));
    result.potentials = reshape(tape, scores, {8});
    return result;
}

TensorPtr contrast_loss(Tape& tape, const TensorPtr& potentials, int answer_index,
                        const ModelConfig& config) {
    if (answer_index < 0 || answer_index >= static_cast<int>(potentials->size()))
        throw std::invalid_argument("contrast_loss: answer index " +
                                    std::to_string(answer_index) + " out of range");
    auto baseline = Tensor::scalar(config.baseline_b);
    // positive pair pushed above the baseline, every negative pushed below
    TensorPtr loss = softplus(
        tape, scale(tape, sub(tape, select(tape, potentials, answer_index), baseline), -1.0));
    for (int64_t j = 0; j < potentials->size(); ++j) {
        if (j == answer_index) continue;
        loss = add(tape, loss, softplus(tape, sub(tape, select(tape, potentials, j), baseline)));
    }
    return loss;
}

TensorPtr cross_entropy_loss(Tape& tape, const TensorPtr& potentials, int answer_index) {
    if (answer_index < 0 || answer_index >= static_cast<int>(potentials->size()))
        throw std::invalid_argument("cross_entropy_loss: answer index " +
                                    std::to_string(answer_index) + " out of range");
    auto probs = softmax(tape, potentials);
    return scale(tape, log(tape, select(tape, probs, answer_index)), -1.0);
}

TensorPtr instance_loss(Tape& tape, const TensorPtr& potentials, int answer_index,
                        const ModelConfig& config) {
    return config.loss == LossMode::contrast
               ? contrast_loss(tape, potentials, answer_index, config)
               : cross_entropy_loss(tape, potentials, answer_index);
}

int predict(const TensorPtr& potentials) { return predict(potentials->values); }

int predict(const std::vector<double>& potentials) {
    int best = 0;
    for (size_t i = 1; i < potentials.size(); ++i)
        if (potentials[i] > potentials[best]) best = static_cast<int>(i);
    return best;
}

std::vector<double> candidate_distribution(const std::vector<double>& potentials) {
    double mx = potentials[0];
    for (double v : potentials) mx = std::max(mx, v);
    std::vector<double> out(potentials.size());
    double z = 0.0;
    for (size_t i = 0; i < potentials.size(); ++i) {
        out[i] = std::exp(potentials[i] - mx);
        z += out[i];
    }
    for (auto& v : out) v /= z;
    return out;
}

}  // namespace copi
