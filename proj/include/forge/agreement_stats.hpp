#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "forge/common.hpp"
#include "forge/instruct_gen.hpp"

namespace forge::agreement {

struct PairedItem {
    std::string question_id;
    char letter_a = 'A';
    char letter_b = 'A';
};

struct PairedAnswers {
    std::string community_a;
    std::string community_b;
    std::vector<PairedItem> items;
};

// Cohen's kappa over the fixed alphabet {A, B, C, D}. Returns 1 when the
// expected agreement is 1 (both raters constant on the same letter). Throws
// Error on an empty pairing.
[[nodiscard]] double cohen_kappa(const PairedAnswers& paired);
[[nodiscard]] double cohen_kappa(std::span<const char> a, std::span<const char> b);

// Questions answered in both pools, sorted by question id.
[[nodiscard]] PairedAnswers pair_answers(std::span<const gen::SurveyEntry> pool_a,
                                         std::span<const gen::SurveyEntry> pool_b);

struct AgreementMatrix {
    std::vector<std::string> communities;
    std::vector<std::vector<std::optional<double>>> values;  // null below min_common
    std::vector<std::vector<std::size_t>> common;            // shared question counts

    [[nodiscard]] json to_json() const;
    [[nodiscard]] std::string to_csv() const;
};

// community_id -> that community's CommSurvey pool.
using SurveyPools = std::map<std::string, std::vector<gen::SurveyEntry>>;

[[nodiscard]] AgreementMatrix agreement_matrix(const SurveyPools& pools, std::size_t min_common = 5);

struct Annotation {
    std::string community_id;
    std::string question_id;
    char answer = 'A';
};

// JSONL {"community_id", "question_id", "answer"}.
[[nodiscard]] std::vector<Annotation> read_annotations(const fs::path& path);

struct HumanAgreement {
    std::string community_id;
    std::size_t annotated = 0;
    std::size_t matches = 0;
    std::optional<double> accuracy;  // nullopt = NA (no annotations)
};

// Accuracy of human answers against the semi-ground truth, per community in
// `pools`. Throws InputError for questions missing from the community's pool.
[[nodiscard]] std::vector<HumanAgreement> human_agreement(std::span<const Annotation> annotations,
                                                          const SurveyPools& pools);

[[nodiscard]] json to_json(std::span<const HumanAgreement> rows);

}  // namespace forge::agreement
