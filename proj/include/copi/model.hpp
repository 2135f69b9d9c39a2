#pragma once

#include <array>
#include <optional>
#include <string>

#include "copi/optim.hpp"
#include "copi/puzzle.hpp"
#include "copi/rng.hpp"
#include "copi/tensor.hpp"

namespace copi {

inline constexpr int kEmbedHidden = 128;   // panel embedder hidden width
inline constexpr int kRuleEmbedWidth = 8;  // learned embedding per (attribute, rule)

enum class LossMode { contrast, cross_entropy };
enum class SamplingMode { soft, gumbel_hard };

/// Ablation presets; everything else is the same code path under flags.
enum class ModelVariant { backbone_xe, contrast_xe, contrast_cl, full };

const char* variant_name(ModelVariant v);
ModelVariant variant_from_name(const std::string& name);

struct ModelConfig {
    int feature_dim = 64;   // latent width D
    int repetitions = 2;    // contrast + residual block pairs
    LossMode loss = LossMode::contrast;
    SamplingMode sampling = SamplingMode::soft;
    double tau = 1.0;       // Gumbel temperature
    double baseline_b = 0.0;
    bool use_contrast = true;
    bool use_inference = true;
    uint64_t seed = 0;

    /// A tagged mutant that adds position codes to panel embeddings. It
    /// deliberately breaks permutation invariance and exists only as the
    /// negative control for the invariance audit.
    bool position_tagged = false;

    static ModelConfig variant(ModelVariant v, uint64_t seed = 0);

    std::string serialize() const;
    static ModelConfig parse(const std::string& text);
    static ModelConfig load(const std::string& path);
    void save(const std::string& path) const;
};

/// Registers all trainable tensors for the configured variant and
/// initializes them from the config seed.
ParameterStore build_parameters(const ModelConfig& config);

// ---------------------------------------------------------------------------
// Forward pieces. All of them run on a caller-supplied tape; with
// tape.recording=false they evaluate values only.
// ---------------------------------------------------------------------------

/// Pixels of the 8 context panels plus one candidate, flattened to
/// [0,1]-scaled rows: context panels fill grid positions (0,0)..(2,1);
/// the candidate completes (2,2).
TensorPtr panel_matrix(const ProblemInstance& inst);      // [16,1024], context then candidates
TensorPtr context_matrix(const ProblemInstance& inst);    // [8,1024]

/// Permutation-invariant encoding of one observation-candidate pair.
/// Row and column partial sums are combined in canonical order, so any
/// row swap or column swap reproduces the output bitwise.
TensorPtr encode_pair(Tape& tape, const std::array<Panel, 8>& context, const Panel& candidate,
                      const ParameterStore& params, const ModelConfig& config);

/// Features for all 8 candidates at once (context embeddings shared), as
/// an [8, D] matrix whose rows follow candidate order.
TensorPtr encode_candidates(Tape& tape, const ProblemInstance& inst,
                            const ParameterStore& params, const ModelConfig& config);

/// F - h(sum F), with the candidate sum taken in canonical order and the
/// summary h = affine(normalize(concat(sum, rule_embedding))). Works for
/// any candidate count; permuting input rows permutes output rows exactly.
TensorPtr contrast_module(Tape& tape, const TensorPtr& features, const TensorPtr& rule_embed,
                          const TensorPtr& h_weight, const TensorPtr& h_bias,
                          bool apply_normalize = true);

/// Factorized rule posterior from the context only; one probability
/// vector over the rule set per attribute.
std::array<TensorPtr, kNumAttributes> infer_rule_distribution(Tape& tape,
                                                              const ProblemInstance& inst,
                                                              const ParameterStore& params,
                                                              const ModelConfig& config);

/// Soft mode returns the posterior unchanged; gumbel_hard draws one
/// perturbed argmax per attribute at temperature tau, one-hot forward
/// with the relaxed gradient. Exactly one sample per call.
std::array<TensorPtr, kNumAttributes> sample_rules(
    Tape& tape, const std::array<TensorPtr, kNumAttributes>& dist, const ModelConfig& config,
    Rng& rng);

/// Concatenated per-attribute embedding of the sampled rules.
TensorPtr rule_embedding(Tape& tape, const std::array<TensorPtr, kNumAttributes>& sampled,
                         const ParameterStore& params);

struct ForwardResult {
    TensorPtr potentials;  // [8], candidate order preserved
    std::optional<std::array<TensorPtr, kNumAttributes>> rule_distribution;
    std::optional<std::array<TensorPtr, kNumAttributes>> sampled_rules;
};

/// Full pipeline: encoder, repeated contrast + residual blocks, output
/// head. rng feeds hard sampling only; the soft default is deterministic.
ForwardResult forward_potentials(Tape& tape, const ProblemInstance& inst,
                                 const ParameterStore& params, const ModelConfig& config,
                                 Rng& rng);

/// Negated ranking objective: softplus(b - f_star) + sum softplus(f' - b).
TensorPtr contrast_loss(Tape& tape, const TensorPtr& potentials, int answer_index,
                        const ModelConfig& config);
TensorPtr cross_entropy_loss(Tape& tape, const TensorPtr& potentials, int answer_index);
TensorPtr instance_loss(Tape& tape, const TensorPtr& potentials, int answer_index,
                        const ModelConfig& config);

/// Argmax over potentials; ties resolve to the lowest index.
int predict(const TensorPtr& potentials);
int predict(const std::vector<double>& potentials);

/// Softmax restriction of the Gibbs candidate distribution.
std::vector<double> candidate_distribution(const std::vector<double>& potentials);

}  // namespace copi
