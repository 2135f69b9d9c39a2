#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "copi/dataset.hpp"
#include "copi/puzzle.hpp"
#include "copi/rng.hpp"

using namespace copi;

TEST_CASE("rule spec sampling is reproducible and uniform") {
    CHECK(sample_rule_spec(Rng(77)) == sample_rule_spec(Rng(77)));

    // Each rule id per attribute within 25% +- 2% over 10k samples.
    Rng rng(5);
    int counts[kNumAttributes][kNumRules] = {};
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const RuleSpec s = sample_rule_spec(rng.split(i));
        for (int a = 0; a < kNumAttributes; ++a) ++counts[a][static_cast<int>(s.rules[a])];
    }
    for (int a = 0; a < kNumAttributes; ++a)
        for (int r = 0; r < kNumRules; ++r) {
            const double frac = static_cast<double>(counts[a][r]) / n;
            CHECK(frac > 0.23);
            CHECK(frac < 0.27);
        }

    // All-constant spec frequency matches (1/4)^4 within 4 sigma.
    Rng rng2(6);
    const int m = 200000;
    int all_const = 0;
    for (int i = 0; i < m; ++i) {
        const RuleSpec s = sample_rule_spec(rng2.split(i));
        bool allc = true;
        for (int a = 0; a < kNumAttributes; ++a) allc = allc && s.rules[a] == Rule::constant;
        if (allc) ++all_const;
    }
    const double p = std::pow(0.25, 4);
    const double sigma = std::sqrt(m * p * (1.0 - p));
    CHECK(std::fabs(all_const - m * p) < 4.0 * sigma);
}

TEST_CASE("generate_matrix realizes each rule") {
    // all constant: each row one value per attribute
    {
        RuleSpec spec;
        spec.rules.fill(Rule::constant);
        const auto grid = generate_matrix(spec, Rng(1));
        for (int a = 0; a < kNumAttributes; ++a)
            for (int r = 0; r < 3; ++r) {
                CHECK(grid[r * 3 + 0].index(a) == grid[r * 3 + 1].index(a));
                CHECK(grid[r * 3 + 1].index(a) == grid[r * 3 + 2].index(a));
            }
    }
    // progression +1 advances by one, modular
    {
        RuleSpec spec;
        spec.rules.fill(Rule::constant);
        spec.rules[0] = Rule::progression_up;
        for (uint64_t seed = 0; seed < 20; ++seed) {
            const auto grid = generate_matrix(spec, Rng(seed));
            for (int r = 0; r < 3; ++r) {
                const int start = grid[r * 3].index(0);
                CHECK(grid[r * 3 + 1].index(0) == (start + 1) % 4);
                CHECK(grid[r * 3 + 2].index(0) == (start + 2) % 4);
            }
            // a row starting at count 2 reads (2,3,4)
            if (grid[0].number == 2) {
                CHECK(grid[1].number == 3);
                CHECK(grid[2].number == 4);
            }
        }
    }
    // distribute_three: every row permutes the same three values
    {
        RuleSpec spec;
        spec.rules.fill(Rule::constant);
        spec.rules[1] = Rule::distribute_three;
        const auto grid = generate_matrix(spec, Rng(9));
        std::set<int> first{grid[0].index(1), grid[1].index(1), grid[2].index(1)};
        CHECK(first.size() == 3);
        for (int r = 1; r < 3; ++r) {
            std::set<int> row{grid[r * 3].index(1), grid[r * 3 + 1].index(1),
                              grid[r * 3 + 2].index(1)};
            CHECK(row == first);
        }
        CHECK(rule_satisfied(Rule::distribute_three, grid, 1));
    }
}

TEST_CASE("distractors: unique answer, distinct candidates, uniform position") {
    Rng rng(31);
    int position_counts[8] = {};
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const uint64_t seed = rng.split(i).next_u64();
        const RuleSpec spec = sample_rule_spec(Rng(seed).split(0));
        const auto grid = generate_matrix(spec, Rng(seed).split(1));
        const CandidateSet cs = generate_distractors(grid, spec, Rng(seed).split(2));
        ++position_counts[cs.answer_index];
        CHECK(cs.candidates[cs.answer_index] == grid[8]);
        for (int a = 0; a < 8; ++a)
            for (int b = a + 1; b < 8; ++b) CHECK(!(cs.candidates[a] == cs.candidates[b]));
    }
    for (int c : position_counts) {
        const double frac = static_cast<double>(c) / n;
        CHECK(frac > 0.105);
        CHECK(frac < 0.145);
    }
}

TEST_CASE("generator and oracle agree on every instance") {
    const auto instances = generate_instances(2024, 2000);
    for (const auto& inst : instances) {
        CHECK(oracle_solve(inst) == inst.answer_index);
        CHECK(consistent_candidates(inst).size() == 1);
    }
}

TEST_CASE("oracle rejects a grid whose answer was swapped out") {
    // All-constant matrix: any perturbed candidate breaks every rule.
    RuleSpec spec;
    spec.rules.fill(Rule::constant);
    const auto grid = generate_matrix(spec, Rng(4));
    ProblemInstance inst;
    inst.rule_spec = spec;
    for (int i = 0; i < 8; ++i) inst.context[i] = render_panel_no_jitter(grid[i]);
    const CandidateSet cs = generate_distractors(grid, spec, Rng(8));
    for (int i = 0; i < 8; ++i) inst.candidates[i] = render_panel_no_jitter(cs.candidates[i]);
    inst.answer_index = cs.answer_index;
    CHECK(oracle_solve(inst) == inst.answer_index);

    AttributeVector mutated = grid[8];
    mutated.set_index(2, (mutated.index(2) + 1) % 4);
    inst.candidates[inst.answer_index] = render_panel_no_jitter(mutated);
    CHECK_THROWS_AS(oracle_solve(inst), std::runtime_error);
    CHECK(consistent_candidates(inst).empty());
}

TEST_CASE("rendering: connectivity, determinism, shades") {
    // one object at the largest size: a single connected foreground blob
    {
        AttributeVector attrs{1, 3, 3, 3};
        const Panel p = render_panel_no_jitter(attrs);
        std::array<int, kPanelPixels> label{};
        label.fill(0);
        int components = 0;
        for (int start = 0; start < kPanelPixels; ++start) {
            if (p.pixels[start] == 0 || label[start]) continue;
            ++components;
            std::vector<int> stack{start};
            label[start] = components;
            while (!stack.empty()) {
                const int cur = stack.back();
                stack.pop_back();
                const int x = cur % kPanelSide, y = cur / kPanelSide;
                const int nb[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
                for (const auto& [nx, ny] : nb) {
                    if (nx < 0 || ny < 0 || nx >= kPanelSide || ny >= kPanelSide) continue;
                    const int id = ny * kPanelSide + nx;
                    if (p.pixels[id] != 0 && !label[id]) {
                        label[id] = components;
                        stack.push_back(id);
                    }
                }
            }
        }
        CHECK(components == 1);
    }
    // same attributes and jitter stream give identical buffers
    {
        AttributeVector attrs{3, 2, 1, 2};
        const Panel a = render_panel(attrs, Rng(55));
        const Panel b = render_panel(attrs, Rng(55));
        CHECK(a.pixels == b.pixels);
    }
    // shade index 3 renders at full white
    {
        AttributeVector attrs{1, 0, 2, 3};
        const Panel p = render_panel_no_jitter(attrs);
        uint8_t mx = 0;
        for (uint8_t v : p.pixels) mx = std::max(mx, v);
        CHECK(mx == 255);
    }
}

TEST_CASE("rendering is injective over all attribute combinations without jitter") {
    std::vector<std::pair<AttributeVector, Panel>> panels;
    for (int num = 1; num <= 4; ++num)
        for (int shape = 0; shape < 4; ++shape)
            for (int size = 0; size < 4; ++size)
                for (int shade = 0; shade < 4; ++shade) {
                    AttributeVector attrs{num, shape, size, shade};
                    panels.emplace_back(attrs, render_panel_no_jitter(attrs));
                }
    for (size_t i = 0; i < panels.size(); ++i)
        for (size_t j = i + 1; j < panels.size(); ++j) {
            INFO("panels ", i, " vs ", j);
            CHECK(panels[i].second.pixels != panels[j].second.pixels);
        }
}

TEST_CASE("dataset round trip, determinism, corruption, empty file") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "copi_dataset_test";
    fs::create_directories(dir);
    const std::string path = (dir / "d.rpmd").string();

    const auto instances = generate_instances(99, 100);
    write_dataset(instances, path);
    const auto loaded = read_dataset(path);
    REQUIRE(loaded.size() == instances.size());
    for (size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].seed == instances[i].seed);
        CHECK(loaded[i].answer_index == instances[i].answer_index);
        CHECK(loaded[i].rule_spec == instances[i].rule_spec);
        for (int p = 0; p < 8; ++p) {
            CHECK(loaded[i].context[p].attributes == instances[i].context[p].attributes);
            CHECK(loaded[i].context[p].pixels == instances[i].context[p].pixels);
            CHECK(loaded[i].candidates[p].pixels == instances[i].candidates[p].pixels);
        }
    }

    // regenerating with the same master seed gives a bytewise-identical file
    const std::string path2 = (dir / "d2.rpmd").string();
    write_dataset(generate_instances(99, 100), path2);
    auto slurp = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    };
    CHECK(slurp(path) == slurp(path2));

    // flipping one payload byte trips the checksum
    {
        std::string data = slurp(path);
        data[data.size() / 2] ^= 0x40;
        std::ofstream out(path2, std::ios::binary | std::ios::trunc);
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
    }
    CHECK_THROWS_WITH_AS(read_dataset(path2), doctest::Contains("byte offset"),
                         std::runtime_error);

    // empty dataset round-trips
    const std::string empty_path = (dir / "empty.rpmd").string();
    write_dataset({}, empty_path);
    CHECK(read_dataset(empty_path).empty());

    // sidecar exists with one line per instance
    std::ifstream sidecar(path + ".txt");
    REQUIRE(sidecar.good());
    int lines = 0;
    std::string line;
    while (std::getline(sidecar, line)) ++lines;
    CHECK(lines == 100);

    fs::remove_all(dir);
}
