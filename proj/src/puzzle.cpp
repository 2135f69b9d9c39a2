#include "copi/puzzle.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

namespace copi {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kRadii[4] = {4, 6, 8, 10};
constexpr int kGrays[4] = {64, 128, 192, 255};
// 2x2 layout; objects are placed in this order as number grows.
constexpr int kCenters[4][2] = {{8, 8}, {24, 8}, {8, 24}, {24, 24}};

int mod_range(int v) {
    return ((v % kAttributeRange) + kAttributeRange) % kAttributeRange;
}

std::string spec_str(const RuleSpec& spec) {
    std::string s;
    for (int i = 0; i < kNumAttributes; ++i) {
        if (i) s += ",";
        s += rule_name(spec.rules[i]);
    }
    return s;
}

}  // namespace

const char* rule_name(Rule r) {
    switch (r) {
        case Rule::constant: return "constant";
        case Rule::progression_up: return "progression+1";
        case Rule::progression_down: return "progression-1";
        case Rule::distribute_three: return "distribute_three";
    }
    return "?";
}

int AttributeVector::index(int attribute) const {
    switch (attribute) {
        case 0: return number - 1;
        case 1: return shape_type;
        case 2: return size;
        case 3: return shade;
    }
    throw std::invalid_argument("attribute index out of range");
}

void AttributeVector::set_index(int attribute, int idx) {
    switch (attribute) {
        case 0: number = idx + 1; return;
        case 1: shape_type = idx; return;
        case 2: size = idx; return;
        case 3: shade = idx; return;
    }
    throw std::invalid_argument("attribute index out of range");
}

bool AttributeVector::valid() const {
    for (int a = 0; a < kNumAttributes; ++a) {
        const int idx = index(a);
        if (idx < 0 || idx >= kAttributeRange) return false;
    }
    return true;
}

RuleSpec sample_rule_spec(Rng rng) {
    RuleSpec spec;
    for (int a = 0; a < kNumAttributes; ++a)
        spec.rules[a] = static_cast<Rule>(rng.index(kNumRules));
    return spec;
}

std::array<AttributeVector, 9> generate_matrix(const RuleSpec& spec, Rng rng) {
    std::array<AttributeVector, 9> grid{};
    for (int a = 0; a < kNumAttributes; ++a) {
        Rng stream = rng.split(static_cast<uint64_t>(a));
        switch (spec.rules[a]) {
            case Rule::constant:
                for (int r = 0; r < 3; ++r) {
                    const int v = stream.index(kAttributeRange);
                    for (int c = 0; c < 3; ++c) grid[r * 3 + c].set_index(a, v);
                }
                break;
            case Rule::progression_up:
            case Rule::progression_down: {
                const int step = spec.rules[a] == Rule::progression_up ? 1 : -1;
                for (int r = 0; r < 3; ++r) {
                    const int start = stream.index(kAttributeRange);
                    for (int c = 0; c < 3; ++c) grid[r * 3 + c].set_index(a, mod_range(start + step * c));
                }
                break;
            }
            case Rule::distribute_three: {
                // Three distinct values fixed for the whole problem.
                std::vector<int> values{0, 1, 2, 3};
                stream.shuffle(values);
                values.resize(3);
                for (int r = 0; r < 3; ++r) {
                    std::vector<int> perm = values;
                    stream.shuffle(perm);
                    for (int c = 0; c < 3; ++c) grid[r * 3 + c].set_index(a, perm[c]);
                }
                break;
            }
        }
    }
    return grid;
}

bool rule_satisfied(Rule rule, const std::array<AttributeVector, 9>& grid, int attribute) {
    auto idx = [&](int r, int c) { return grid[r * 3 + c].index(attribute); };
    switch (rule) {
        case Rule::constant:
            for (int r = 0; r < 3; ++r)
                if (idx(r, 0) != idx(r, 1) || idx(r, 1) != idx(r, 2)) return false;
            return true;
        case Rule::progression_up:
        case Rule::progression_down: {
            const int step = rule == Rule::progression_up ? 1 : -1;
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 2; ++c)
                    if (idx(r, c + 1) != mod_range(idx(r, c) + step)) return false;
            return true;
        }
        case Rule::distribute_three: {
            std::set<int> first{idx(0, 0), idx(0, 1), idx(0, 2)};
            if (first.size() != 3) return false;
            for (int r = 1; r < 3; ++r) {
                std::set<int> row{idx(r, 0), idx(r, 1), idx(r, 2)};
                if (row != first) return false;
            }
            return true;
        }
    }
    return false;
}

namespace {

// Consistency of one completed grid: every attribute satisfied by some rule.
// Equivalent to the exhaustive assignment scan because attributes are
// independent; consistent_candidates() below does the literal enumeration.
bool grid_consistent(const std::array<AttributeVector, 9>& grid) {
    for (int a = 0; a < kNumAttributes; ++a) {
        bool any = false;
        for (int r = 0; r < kNumRules && !any; ++r)
            any = rule_satisfied(static_cast<Rule>(r), grid, a);
        if (!any) return false;
    }
    return true;
}

}  // namespace

CandidateSet generate_distractors(const std::array<AttributeVector, 9>& matrix,
                                  const RuleSpec& spec, Rng rng) {
    const AttributeVector answer = matrix[8];
    for (int attempt = 0; attempt < 100; ++attempt) {
        Rng stream = rng.split(static_cast<uint64_t>(attempt));
        std::vector<AttributeVector> cands{answer};
        for (int draws = 0; cands.size() < 8 && draws < 256; ++draws) {
            AttributeVector d = answer;
            const int k = 1 + stream.index(2);
            const int first = stream.index(kNumAttributes);
            const int second = (first + 1 + stream.index(kNumAttributes - 1)) % kNumAttributes;
            d.set_index(first, mod_range(d.index(first) + (stream.index(2) == 0 ? 1 : -1)));
            if (k == 2)
                d.set_index(second, mod_range(d.index(second) + (stream.index(2) == 0 ? 1 : -1)));
            if (std::find(cands.begin(), cands.end(), d) == cands.end()) cands.push_back(d);
        }
        if (cands.size() < 8) continue;

        std::vector<int> order{0, 1, 2, 3, 4, 5, 6, 7};
        stream.shuffle(order);
        CandidateSet out{};
        for (int i = 0; i < 8; ++i) {
            out.candidates[i] = cands[order[i]];
            if (order[i] == 0) out.answer_index = i;
        }

        // Uniqueness gate: exactly one candidate may complete the grid.
        int consistent = 0;
        std::array<AttributeVector, 9> grid = matrix;
        for (int i = 0; i < 8; ++i) {
            grid[8] = out.candidates[i];
            if (grid_consistent(grid)) ++consistent;
        }
        if (consistent == 1) return out;
    }
    throw std::runtime_error("generate_distractors: uniqueness unattainable after 100 retries for spec " +
                             spec_str(spec));
}

namespace {

void fill_polygon(std::array<uint8_t, kPanelPixels>& px, double cx, double cy, int vertices,
                  double radius, double phase, uint8_t gray) {
    std::vector<double> vx(vertices), vy(vertices);
    for (int i = 0; i < vertices; ++i) {
        const double ang = phase + 2.0 * kPi * i / vertices;
        vx[i] = cx + radius * std::cos(ang);
        vy[i] = cy + radius * std::sin(ang);
    }
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
    const int x1 = std::min(kPanelSide - 1, static_cast<int>(std::ceil(cx + radius)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
    const int y1 = std::min(kPanelSide - 1, static_cast<int>(std::ceil(cy + radius)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            bool inside = false;
            for (int i = 0, j = vertices - 1; i < vertices; j = i++) {
                if ((vy[i] > y) != (vy[j] > y) &&
                    x < (vx[j] - vx[i]) * (y - vy[i]) / (vy[j] - vy[i]) + vx[i])
                    inside = !inside;
            }
            if (inside) px[y * kPanelSide + x] = gray;
        }
}

void fill_circle(std::array<uint8_t, kPanelPixels>& px, double cx, double cy, double radius,
                 uint8_t gray) {
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
    const int x1 = std::min(kPanelSide - 1, static_cast<int>(std::ceil(cx + radius)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
    const int y1 = std::min(kPanelSide - 1, static_cast<int>(std::ceil(cy + radius)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius)
                px[y * kPanelSide + x] = gray;
}

Panel render_with_jitter(const AttributeVector& attrs, Rng* jitter) {
    if (!attrs.valid()) throw std::invalid_argument("render_panel: attributes out of range");
    Panel p;
    p.attributes = attrs;
    p.pixels.fill(0);
    const double radius = kRadii[attrs.size];
    const uint8_t gray = static_cast<uint8_t>(kGrays[attrs.shade]);
    for (int obj = 0; obj < attrs.number; ++obj) {
        double cx = kCenters[obj][0];
        double cy = kCenters[obj][1];
        if (jitter != nullptr) {
            cx += jitter->index(3) - 1;
            cy += jitter->index(3) - 1;
        }
        switch (attrs.shape_type) {
            case 0: fill_polygon(p.pixels, cx, cy, 3, radius, -kPi / 2, gray); break;
            case 1: fill_polygon(p.pixels, cx, cy, 4, radius, -kPi / 4, gray); break;
            case 2: fill_polygon(p.pixels, cx, cy, 5, radius, -kPi / 2, gray); break;
            default: fill_circle(p.pixels, cx, cy, radius, gray); break;
        }
    }
    return p;
}

}  // namespace

Panel render_panel(const AttributeVector& attrs, Rng jitter_rng) {
    return render_with_jitter(attrs, &jitter_rng);
}

Panel render_panel_no_jitter(const AttributeVector& attrs) {
    return render_with_jitter(attrs, nullptr);
}

std::vector<int> consistent_candidates(const ProblemInstance& instance) {
    std::array<AttributeVector, 9> grid;
    for (int i = 0; i < 8; ++i) grid[i] = instance.context[i].attributes;
    std::vector<int> hits;
    for (int cand = 0; cand < 8; ++cand) {
        grid[8] = instance.candidates[cand].attributes;
        bool any = false;
        // All M^N assignments; an assignment passes when every attribute's
        // assigned rule holds on all three rows.
        const int total = 1 << (2 * kNumAttributes);  // 4^4
        for (int code = 0; code < total && !any; ++code) {
            bool ok = true;
            int c = code;
            for (int a = 0; a < kNumAttributes && ok; ++a) {
                ok = rule_satisfied(static_cast<Rule>(c & 3), grid, a);
                c >>= 2;
            }
            any = ok;
        }
        if (any) hits.push_back(cand);
    }
    return hits;
}

int oracle_solve(const ProblemInstance& instance) {
    const std::vector<int> hits = consistent_candidates(instance);
    if (hits.size() != 1)
        throw std::runtime_error("oracle_solve: " + std::to_string(hits.size()) +
                                 " consistent candidates (expected exactly 1)");
    return hits[0];
}

ProblemInstance with_rows01_swapped(ProblemInstance inst) {
    for (int c = 0; c < 3; ++c) std::swap(inst.context[c], inst.context[3 + c]);
    return inst;
}

ProblemInstance with_cols01_swapped(ProblemInstance inst) {
    std::swap(inst.context[0], inst.context[1]);
    std::swap(inst.context[3], inst.context[4]);
    std::swap(inst.context[6], inst.context[7]);
    return inst;
}

ProblemInstance with_candidates_permuted(const ProblemInstance& inst,
                                         const std::array<int, 8>& perm) {
    ProblemInstance out = inst;
    for (int i = 0; i < 8; ++i) {
        out.candidates[i] = inst.candidates[perm[i]];
        if (perm[i] == inst.answer_index) out.answer_index = i;
    }
    return out;
}

ProblemInstance generate_instance(uint64_t seed) {
    Rng rng(seed);
    ProblemInstance inst;
    inst.seed = seed;
    inst.rule_spec = sample_rule_spec(rng.split(0));
    const auto matrix = generate_matrix(inst.rule_spec, rng.split(1));
    const CandidateSet cands = generate_distractors(matrix, inst.rule_spec, rng.split(2));
    inst.answer_index = cands.answer_index;
    Rng jitter = rng.split(3);
    for (int i = 0; i < 8; ++i) inst.context[i] = render_panel(matrix[i], jitter.split(i));
    for (int i = 0; i < 8; ++i)
        inst.candidates[i] = render_panel(cands.candidates[i], jitter.split(8 + i));
    return inst;
}

std::vector<ProblemInstance> generate_instances(uint64_t master_seed, int count) {
    if (count < 0) throw std::invalid_argument("generate_instances: negative count");
    Rng root(master_seed);
    std::vector<ProblemInstance> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i)
        out.push_back(generate_instance(root.split(static_cast<uint64_t>(i)).next_u64()));
    return out;
}

}  // namespace copi
