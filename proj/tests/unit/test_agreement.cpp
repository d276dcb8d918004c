#include <doctest.h>

#include "forge/agreement_stats.hpp"
#include "forge/errors.hpp"
#include "helpers.hpp"

using namespace forge;
using namespace forge::agreement;

namespace {

std::vector<char> letters(std::string_view s) { return {s.begin(), s.end()}; }

// Kappa from a full 4x4 contingency table, written independently of the library.
double kappa_from_table(const std::vector<char>& a, const std::vector<char>& b) {
    double table[4][4] = {};
    for (std::size_t i = 0; i < a.size(); ++i) table[a[i] - 'A'][b[i] - 'A'] += 1.0;
    const double n = static_cast<double>(a.size());
    double diag = 0;
    double chance = 0;
    for (int r = 0; r < 4; ++r) {
        diag += table[r][r];
        double row = 0;
        double col = 0;
        for (int c = 0; c < 4; ++c) {
            row += table[r][c];
            col += table[c][r];
        }
        chance += row * col;
    }
    const double po = diag / n;
    const double pe = chance / (n * n);
    return pe == 1.0 ? 1.0 : (po - pe) / (1.0 - pe);
}

std::vector<gen::SurveyEntry> pool(const std::string& community, std::string_view answers, std::size_t offset = 0) {
    std::vector<gen::SurveyEntry> out;
    for (std::size_t i = 0; i < answers.size(); ++i) {
        char qid[16];
        std::snprintf(qid, sizeof qid, "q%03zu", i + offset);
        out.push_back({qid, 0, 0, community, "Q", {"1", "2", "3", "4"}, answers[i]});
    }
    return out;
}

}  // namespace

TEST_CASE("kappa on a hand-computed case") {
    // po = 0.75, pe = 0.5*0.25 + 0.5*0.75 = 0.5
    CHECK(cohen_kappa(letters("AABB"), letters("ABBB")) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(cohen_kappa(letters("AAAA"), letters("AAAA")) == 1.0);
    CHECK_THROWS_AS((void)cohen_kappa(letters(""), letters("")), Error);
    CHECK_THROWS_AS((void)cohen_kappa(letters("A"), letters("AB")), Error);
    CHECK_THROWS_AS((void)cohen_kappa(letters("E"), letters("A")), InputError);
}

TEST_CASE("kappa properties on random sequences") {
    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        const auto n = 1 + rng.below(40);
        std::vector<char> a(n);
        std::vector<char> b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = static_cast<char>('A' + rng.below(4));
            b[i] = rng.uniform() < 0.5 ? a[i] : static_cast<char>('A' + rng.below(4));
        }
        const double k = cohen_kappa(a, b);
        CHECK(std::abs(k - kappa_from_table(a, b)) <= 1e-9);
        CHECK(std::abs(k - cohen_kappa(b, a)) <= 1e-12);
        CHECK(cohen_kappa(a, a) == doctest::Approx(1.0));
        CHECK(k <= 1.0 + 1e-12);

        // Relabelling letters with one permutation on both sides changes nothing.
        std::vector<char> perm{'A', 'B', 'C', 'D'};
        rng.shuffle(perm);
        auto pa = a;
        auto pb = b;
        for (auto& c : pa) c = perm[static_cast<std::size_t>(c - 'A')];
        for (auto& c : pb) c = perm[static_cast<std::size_t>(c - 'A')];
        CHECK(std::abs(cohen_kappa(pa, pb) - k) <= 1e-12);
    }
}

TEST_CASE("pairing uses only shared questions") {
    const auto a = pool("a", "ABCD");
    const auto b = pool("b", "ABCDAB", 2);  // q002..q007
    const auto paired = pair_answers(a, b);
    REQUIRE(paired.items.size() == 2);
    CHECK(paired.items[0].question_id == "q002-s0");
    CHECK(paired.items[0].letter_a == 'C');
    CHECK(paired.items[0].letter_b == 'A');
}

TEST_CASE("agreement matrix") {
    SurveyPools pools;
    pools["a"] = pool("a", "ABCDABCDAB");
    pools["b"] = pool("b", "ABCDABCDAB");
    pools["c"] = pool("c", "ABCDDCBA", 8);  // only 2 shared questions with a and b
    pools["d"] = pool("d", "BBCDABCAAB");
    const auto m = agreement_matrix(pools, 5);
    CHECK(m.communities == std::vector<std::string>{"a", "b", "c", "d"});
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(*m.values[i][i] == 1.0);
        for (std::size_t j = 0; j < 4; ++j) CHECK(m.values[i][j] == m.values[j][i]);
    }
    CHECK(*m.values[0][1] == 1.0);
    CHECK_FALSE(m.values[0][2]);
    CHECK(m.common[0][2] == 2);
    CHECK(*m.values[0][3] == doctest::Approx(kappa_from_table(letters("ABCDABCDAB"), letters("BBCDABCAAB"))));
    CHECK(m.to_json()["kappa"][0][2].is_null());
    CHECK(m.to_csv().find("a,1.000000,1.000000,NA,") != std::string::npos);

    // Record order inside a pool does not matter.
    auto shuffled = pools;
    Rng rng(3);
    for (auto& [c, p] : shuffled) rng.shuffle(p);
    CHECK(agreement_matrix(shuffled, 5).to_json() == m.to_json());
}

TEST_CASE("human agreement against the semi-ground truth") {
    SurveyPools pools;
    pools["a"] = pool("a", "ABCDABCDABCDABCDABCD");
    pools["b"] = pool("b", "AAAA");
    std::vector<Annotation> anns;
    for (std::size_t i = 0; i < 20; ++i) {
        const char truth = pools["a"][i].answer;
        anns.push_back({"a", pools["a"][i].question_id(), i < 15 ? truth : static_cast<char>('A' + (truth - 'A' + 1) % 4)});
    }
    auto rows = human_agreement(anns, pools);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].annotated == 20);
    CHECK(*rows[0].accuracy == doctest::Approx(0.75));
    CHECK_FALSE(rows[1].accuracy);
    CHECK(to_json(rows)[1]["accuracy"] == "NA");

    anns.push_back({"b", "q999-s0", 'A'});
    CHECK_THROWS_AS((void)human_agreement(anns, pools), InputError);
}

TEST_CASE("annotation files are validated") {
    test::TempDir dir;
    write_text_atomic(dir / "a.jsonl", R"({"community_id":"a","question_id":"q000-s0","answer":"B"})"
                                       "\n");
    CHECK(read_annotations(dir / "a.jsonl").front().answer == 'B');
    write_text_atomic(dir / "b.jsonl", R"({"community_id":"a","question_id":"q000-s0","answer":"F"})"
                                       "\n");
    CHECK_THROWS_AS((void)read_annotations(dir / "b.jsonl"), InputError);
}
