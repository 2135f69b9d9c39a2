#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "copi/rng.hpp"

namespace copi {

inline constexpr int kNumAttributes = 4;   // number, shape, size, shade
inline constexpr int kNumRules = 4;        // constant, +1, -1, distribute_three
inline constexpr int kAttributeRange = 4;  // every attribute takes 4 values
inline constexpr int kPanelSide = 32;
inline constexpr int kPanelPixels = kPanelSide * kPanelSide;

enum class Rule : uint8_t {
    constant = 0,
    progression_up = 1,    // +1 along the row, modular
    progression_down = 2,  // -1 along the row, modular
    distribute_three = 3,  // each row permutes the same three values
};

const char* rule_name(Rule r);

/// Symbolic description of one panel. number counts drawn objects (1..4);
/// the other fields are indices 0..3.
struct AttributeVector {
    int number = 1;
    int shape_type = 0;  // triangle / square / pentagon / circle
    int size = 0;
    int shade = 0;

    bool operator==(const AttributeVector&) const = default;

    /// Value as a 0..3 index for modular rule arithmetic.
    int index(int attribute) const;
    void set_index(int attribute, int idx);
    bool valid() const;
};

/// One rule per attribute, drawn independently.
struct RuleSpec {
    std::array<Rule, kNumAttributes> rules{};
    bool operator==(const RuleSpec&) const = default;
};

struct Panel {
    AttributeVector attributes;
    std::array<uint8_t, kPanelPixels> pixels{};
};

/// A full puzzle: 8 context panels filling grid positions (0,0)..(2,1),
/// 8 candidates for position (2,2), and generator metadata. Exactly one
/// candidate is rule-consistent, enforced at generation.
struct ProblemInstance {
    std::array<Panel, 8> context;
    std::array<Panel, 8> candidates;
    int answer_index = 0;
    RuleSpec rule_spec;
    uint64_t seed = 0;
};

/// Uniform independent rule per attribute.
RuleSpec sample_rule_spec(Rng rng);

/// Nine panels (row-major) whose rows all satisfy the spec on every
/// attribute. Progressions wrap modularly, so any start value works.
std::array<AttributeVector, 9> generate_matrix(const RuleSpec& spec, Rng rng);

/// True if the completed 3x3 grid satisfies `rule` on `attribute` row-wise.
bool rule_satisfied(Rule rule, const std::array<AttributeVector, 9>& grid, int attribute);

struct CandidateSet {
    std::array<AttributeVector, 8> candidates;
    int answer_index;
};

/// Seven distractors from 1-2 attribute perturbations of the answer, all
/// eight pairwise distinct, shuffled; regenerates until the symbolic check
/// finds exactly one consistent candidate. Throws after 100 retries,
/// reporting the offending spec.
CandidateSet generate_distractors(const std::array<AttributeVector, 9>& matrix,
                                  const RuleSpec& spec, Rng rng);

/// Rasterize: `number` copies of the shape on a fixed 2x2 sub-grid with
/// +-1 px jitter per object. Radii {4,6,8,10} by size, gray {64,128,192,255}
/// by shade, on black.
Panel render_panel(const AttributeVector& attrs, Rng jitter_rng);
Panel render_panel_no_jitter(const AttributeVector& attrs);

/// Indices of candidates for which some rule assignment satisfies all
/// three rows on all attributes (exhaustive over the M^N assignments).
std::vector<int> consistent_candidates(const ProblemInstance& instance);

/// Perfect-information solver: the unique consistent candidate. Throws if
/// zero or several candidates are consistent (a generator bug).
int oracle_solve(const ProblemInstance& instance);

/// Presentation transforms for invariance checks. Rows/columns 0 and 1 are
/// the complete ones (row/column 2 hold the gap), so they are the
/// swappable pairs in the stored layout.
ProblemInstance with_rows01_swapped(ProblemInstance inst);
ProblemInstance with_cols01_swapped(ProblemInstance inst);
/// candidates_new[i] = candidates_old[perm[i]], answer index remapped.
ProblemInstance with_candidates_permuted(const ProblemInstance& inst,
                                         const std::array<int, 8>& perm);

/// Fully deterministic instance from its seed.
ProblemInstance generate_instance(uint64_t seed);

/// Instances for seeds derived from master_seed; deterministic and
/// independent per index.
std::vector<ProblemInstance> generate_instances(uint64_t master_seed, int count);

}  // namespace copi
