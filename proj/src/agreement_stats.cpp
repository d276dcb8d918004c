#include "forge/agreement_stats.hpp"

#include <array>
#include <set>
#include <sstream>

#include "forge/errors.hpp"

namespace forge::agreement {

namespace {

std::size_t slot(char c) {
    if (c < 'A' || c > 'D') throw InputError(std::string("answer letter out of range: ") + c);
    return static_cast<std::size_t>(c - 'A');
}

}  // namespace

double cohen_kappa(std::span<const char> a, std::span<const char> b) {
    if (a.size() != b.size()) throw Error("cohen_kappa: sequences differ in length");
    if (a.empty()) throw Error("cohen_kappa: empty pairing");

    std::array<double, 4> pa{};
    std::array<double, 4> pb{};
    std::size_t agree = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        pa[slot(a[i])] += 1.0;
        pb[slot(b[i])] += 1.0;
        agree += a[i] == b[i] ? 1 : 0;
    }
    const double n = static_cast<double>(a.size());
    const double p_o = static_cast<double>(agree) / n;
    double p_e = 0.0;
    for (std::size_t c = 0; c < 4; ++c) p_e += (pa[c] / n) * (pb[c] / n);
    if (p_e >= 1.0) return 1.0;
    return (p_o - p_e) / (1.0 - p_e);
}

double cohen_kappa(const PairedAnswers& paired) {
    std::vector<char> a;
    std::vector<char> b;
    for (const auto& item : paired.items) {
        a.push_back(item.letter_a);
        b.push_back(item.letter_b);
    }
    return cohen_kappa(a, b);
}

PairedAnswers pair_answers(std::span<const gen::SurveyEntry> pool_a, std::span<const gen::SurveyEntry> pool_b) {
    PairedAnswers out;
    std::map<std::string, char> answers_b;
    for (const auto& e : pool_b) {
        answers_b.emplace(e.question_id(), e.answer);
        out.community_b = e.community_id;
    }
    std::map<std::string, char> answers_a;
    for (const auto& e : pool_a) {
        answers_a.emplace(e.question_id(), e.answer);
        out.community_a = e.community_id;
    }
    for (const auto& [qid, letter] : answers_a) {
        if (auto it = answers_b.find(qid); it != answers_b.end()) out.items.push_back({qid, letter, it->second});
    }
    return out;
}

AgreementMatrix agreement_matrix(const SurveyPools& pools, std::size_t min_common) {
    AgreementMatrix m;
    for (const auto& [c, pool] : pools) m.communities.push_back(c);
    const auto n = m.communities.size();
    m.values.assign(n, std::vector<std::optional<double>>(n));
    m.common.assign(n, std::vector<std::size_t>(n, 0));
    for (std::size_t i = 0; i < n; ++i) {
        m.values[i][i] = 1.0;
        m.common[i][i] = pools.at(m.communities[i]).size();
        for (std::size_t j = i + 1; j < n; ++j) {
            auto paired = pair_answers(pools.at(m.communities[i]), pools.at(m.communities[j]));
            m.common[i][j] = m.common[j][i] = paired.items.size();
            if (!paired.items.empty() && paired.items.size() >= min_common) {
                const double k = cohen_kappa(paired);
                m.values[i][j] = k;
                m.values[j][i] = k;
            }
        }
    }
    return m;
}

json AgreementMatrix::to_json() const {
    json rows = json::array();
    for (const auto& row : values) {
        json r = json::array();
        for (const auto& v : row) r.push_back(v ? json(*v) : json(nullptr));
        rows.push_back(std::move(r));
    }
    return {{"communities", communities}, {"kappa", rows}, {"common_questions", common}};
}

std::string AgreementMatrix::to_csv() const {
    std::ostringstream out;
    out << "community";
    for (const auto& c : communities) out << ',' << c;
    out << '\n';
    out.precision(6);
    out << std::fixed;
    for (std::size_t i = 0; i < communities.size(); ++i) {
        out << communities[i];
        for (const auto& v : values[i]) {
            out << ',';
            if (v) {
                out << *v;
            } else {
                out << "NA";
            }
        }
        out << '\n';
    }
    return out.str();
}

std::vector<Annotation> read_annotations(const fs::path& path) {
    std::vector<Annotation> out;
    std::size_t line = 0;
    for (const auto& r : read_jsonl(path)) {
        ++line;
        if (!r.is_object() || !r.contains("community_id") || !r.contains("question_id") || !r.contains("answer")) {
            throw InputError(path.string() + ": record " + std::to_string(line) + " is incomplete", line);
        }
        const auto answer = r["answer"].get<std::string>();
        if (answer.size() != 1 || answer[0] < 'A' || answer[0] > 'D') {
            throw InputError(path.string() + ": record " + std::to_string(line) + " answer must be A-D", line);
        }
        out.push_back({r["community_id"].get<std::string>(), r["question_id"].get<std::string>(), answer[0]});
    }
    return out;
}

std::vector<HumanAgreement> human_agreement(std::span<const Annotation> annotations, const SurveyPools& pools) {
    std::map<std::string, HumanAgreement> rows;
    for (const auto& [c, pool] : pools) rows[c] = HumanAgreement{c, 0, 0, std::nullopt};

    for (const auto& a : annotations) {
        const auto pool = pools.find(a.community_id);
        if (pool == pools.end()) throw InputError("annotation for unknown community " + a.community_id);
        const auto it = std::find_if(pool->second.begin(), pool->second.end(),
                                     [&](const gen::SurveyEntry& e) { return e.question_id() == a.question_id; });
        if (it == pool->second.end()) {
            throw InputError("unknown question id " + a.question_id + " for community " + a.community_id);
        }
        auto& row = rows[a.community_id];
        ++row.annotated;
        row.matches += it->answer == a.answer ? 1 : 0;
    }
    std::vector<HumanAgreement> out;
    for (auto& [c, row] : rows) {
        if (row.annotated > 0) row.accuracy = static_cast<double>(row.matches) / static_cast<double>(row.annotated);
        out.push_back(row);
    }
    return out;
}

json to_json(std::span<const HumanAgreement> rows) {
    json out = json::array();
    for (const auto& r : rows) {
        out.push_back({{"community_id", r.community_id},
                       {"annotated", r.annotated},
                       {"matches", r.matches},
                       {"accuracy", r.accuracy ? json(*r.accuracy) : json("NA")}});
    }
    return out;
}

}  // namespace forge::agreement
