#include "forge/survey_eval.hpp"

#include <array>
#include <cctype>
#include <fstream>
#include <mutex>
#include <regex>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "forge/errors.hpp"

namespace forge::eval {

std::string_view to_string(ModeKind kind) noexcept {
    switch (kind) {
        case ModeKind::Plain: return "plain";
        case ModeKind::Steering: return "steering";
        case ModeKind::Context: return "context";
        case ModeKind::SteeringContext: return "steering_context";
    }
    return "plain";
}

std::optional<ModeKind> parse_mode(std::string_view s) noexcept {
    if (s == "plain") return ModeKind::Plain;
    if (s == "steering") return ModeKind::Steering;
    if (s == "context") return ModeKind::Context;
    if (s == "steering_context") return ModeKind::SteeringContext;
    return std::nullopt;
}

std::string steering_directive(std::string_view display_name) {
    return "Select only one answer that best aligns with the opinions of members from subreddit r/" +
           std::string(display_name) +
           " by stating either A, B, C, or D. Do not provide any additional explanation or rationale for your "
           "choice.";
}

namespace {

std::string flatten(std::string_view text) {
    std::string out;
    bool space = false;
    for (char c : text) {
        if (c == '\n' || c == '\r' || c == '\t' || c == ' ') {
            space = true;
            continue;
        }
        if (space && !out.empty()) out.push_back(' ');
        space = false;
        out.push_back(c);
    }
    return out;
}

}  // namespace

std::string build_survey_prompt(const SurveyQuestion& item, const EvalMode& mode, std::span<const std::string> retrieved) {
    if (mode.steering() && trim(mode.display_name).empty()) {
        throw ConfigError("steering mode requires a community display name");
    }
    std::ostringstream p;
    p << item.question << "\n";
    for (std::size_t i = 0; i < 4; ++i) p << static_cast<char>('A' + i) << ". " << item.options[i] << "\n";
    if (!mode.context()) {
        p << (mode.steering() ? steering_directive(mode.display_name) : std::string(kPlainDirective));
        return p.str();
    }
    if (mode.steering()) {
        p << "According to the following statements, learn the mindset and select only one answer that best aligns "
             "with the opinions of members from subreddit r/"
          << mode.display_name
          << " by stating either A, B, C, or D. Do not provide any additional explanation or rationale for your "
             "choice.\n";
    } else {
        p << kContextDirective << "\n";
    }
    for (const auto& c : retrieved) p << "- " << flatten(c) << "\n";
    return p.str();
}

std::vector<RankedDoc> retrieve_context(const std::string& query_text, std::span<const Candidate> candidates,
                                        std::size_t k, llm::EmbeddingCache& embedder) {
    if (k == 0) return {};
    if (candidates.empty()) throw Error("context retrieval has no candidate documents");
    if (k > candidates.size()) {
        spdlog::warn("context_k={} exceeds {} candidates; using all", k, candidates.size());
        k = candidates.size();
    }
    std::vector<std::string> texts;
    texts.reserve(candidates.size() + 1);
    texts.push_back(query_text);
    for (const auto& c : candidates) texts.push_back(c.text);
    const auto vectors = embedder.embed(texts);

    std::vector<RankedDoc> ranked;
    ranked.reserve(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        ranked.push_back({candidates[i].doc_id, candidates[i].text, llm::cosine_similarity(vectors[0], vectors[i + 1])});
    }
    const auto better = [](const RankedDoc& a, const RankedDoc& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.doc_id < b.doc_id;
    };
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(k), ranked.end(), better);
    ranked.resize(k);
    return ranked;
}

char parse_answer(std::string_view completion) {
    // Rule 1
    std::size_t b = 0;
    while (b < completion.size() && std::isspace(static_cast<unsigned char>(completion[b]))) ++b;
    std::size_t e = b;
    while (e < completion.size() && !std::isspace(static_cast<unsigned char>(completion[e]))) ++e;
    std::string_view token = completion.substr(b, e - b);
    while (!token.empty() && std::ispunct(static_cast<unsigned char>(token.back()))) token.remove_suffix(1);
    if (token.size() == 1) {
        const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(token[0])));
        if (c >= 'A' && c <= 'D') return c;
    }
    // Rule 2
    static const std::regex answer_is(R"(answer is\s*\(?([A-Da-d])(?![A-Za-z0-9]))", std::regex::icase);
    std::match_results<std::string_view::const_iterator> m;
    if (std::regex_search(completion.begin(), completion.end(), m, answer_is)) {
        return static_cast<char>(std::toupper(static_cast<unsigned char>(m[1].str()[0])));
    }
    return kUnparseable;
}

char majority_vote(std::span<const char> votes) {
    std::array<std::size_t, 4> counts{};
    for (char v : votes) {
        if (v >= 'A' && v <= 'D') ++counts[static_cast<std::size_t>(v - 'A')];
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < 4; ++i) {
        if (counts[i] > counts[best]) best = i;
    }
    if (counts[best] == 0) return kAbstain;
    return static_cast<char>('A' + best);
}

namespace {

std::string letter_string(char c) {
    if (c == kAbstain) return "ABSTAIN";
    return std::string(1, c);
}

char letter_from_string(const std::string& s) {
    if (s == "ABSTAIN") return kAbstain;
    if (s.size() == 1 && s[0] >= 'A' && s[0] <= 'D') return s[0];
    throw InputError("eval record: bad letter \"" + s + "\"");
}

}  // namespace

json to_json(const EvalRecord& r) {
    json votes = json::array();
    for (char v : r.votes) votes.push_back(std::string(1, v));
    return {{"question_id", r.question_id},
            {"query_id", r.query_id},
            {"topic_id", r.topic_id},
            {"community_id", r.community_id},
            {"backend_id", r.backend_id},
            {"mode", r.mode},
            {"completions", r.completions},
            {"votes", votes},
            {"final", letter_string(r.final_answer)},
            {"truth", r.truth ? json(std::string(1, *r.truth)) : json(nullptr)},
            {"correct", r.correct ? json(*r.correct) : json(nullptr)}};
}

EvalRecord record_from_json(const json& j) {
    EvalRecord r;
    r.question_id = j.at("question_id").get<std::string>();
    r.query_id = j.value("query_id", "");
    r.topic_id = j.value("topic_id", 0);
    r.community_id = j.value("community_id", "");
    r.backend_id = j.value("backend_id", "");
    r.mode = j.value("mode", "");
    r.completions = j.at("completions").get<std::vector<std::string>>();
    for (const auto& v : j.at("votes")) r.votes.push_back(letter_from_string(v.get<std::string>()));
    r.final_answer = letter_from_string(j.at("final").get<std::string>());
    if (j.contains("truth") && !j["truth"].is_null()) r.truth = letter_from_string(j["truth"].get<std::string>());
    if (j.contains("correct") && !j["correct"].is_null()) r.correct = j["correct"].get<bool>();
    return r;
}

std::optional<double> EvalReport::accuracy() const noexcept {
    const auto denom = counts.correct + counts.incorrect + counts.abstained;
    if (denom == 0) return std::nullopt;
    return static_cast<double>(counts.correct) / static_cast<double>(denom);
}

json to_json(const EvalReport& r) {
    const auto acc = r.accuracy();
    return {{"community_id", r.community_id},
            {"backend_id", r.backend_id},
            {"mode", r.mode},
            {"accuracy", acc ? json(*acc) : json(nullptr)},
            {"counts",
             {{"correct", r.counts.correct},
              {"incorrect", r.counts.incorrect},
              {"abstained", r.counts.abstained},
              {"skipped", r.counts.skipped}}}};
}

EvalReport summarize(std::span<const EvalRecord> records, const std::string& community_id, const std::string& backend_id,
                     const std::string& mode, std::size_t skipped) {
    EvalReport report{community_id, backend_id, mode, {}};
    report.counts.skipped = skipped;
    for (const auto& r : records) {
        if (!r.truth) {
            ++report.counts.skipped;
        } else if (r.final_answer == kAbstain) {
            ++report.counts.abstained;
        } else if (r.final_answer == *r.truth) {
            ++report.counts.correct;
        } else {
            ++report.counts.incorrect;
        }
    }
    return report;
}

AdministerResult administer(std::span<const AdministeredItem> items, const std::string& community_id,
                            llm::ChatBackend& subject, const EvalMode& mode, const AdministerOptions& options) {
    if (options.n_samples < 1) throw ConfigError("n_samples must be >= 1");
    const std::string mode_name(to_string(mode.kind));

    std::map<std::string, EvalRecord> previous;
    if (options.records_path && fs::exists(*options.records_path)) {
        for (const auto& j : read_jsonl(*options.records_path)) {
            auto r = record_from_json(j);
            if (static_cast<int>(r.completions.size()) == options.n_samples) previous.emplace(r.question_id, std::move(r));
        }
    }

    std::vector<const AdministeredItem*> scored;
    std::size_t skipped = 0;
    for (const auto& item : items) {
        if (item.truth) {
            scored.push_back(&item);
        } else {
            ++skipped;
        }
    }

    std::vector<EvalRecord> records(scored.size());
    std::mutex append_mu;
    std::ofstream append;
    if (options.records_path) {
        fs::create_directories(options.records_path->parent_path());
        append.open(*options.records_path, std::ios::app);
    }

    parallel_for(scored.size(), options.workers, [&](std::size_t i) {
        const auto& item = *scored[i];
        const auto& q = item.question;
        if (auto it = previous.find(q.question_id); it != previous.end()) {
            records[i] = it->second;
            return;
        }
        EvalRecord r;
        r.question_id = q.question_id;
        r.query_id = q.query_id;
        r.topic_id = q.topic_id;
        r.community_id = community_id;
        r.backend_id = subject.id();
        r.mode = mode_name;
        r.truth = item.truth;

        const auto prompt = build_survey_prompt(q, mode, item.context);
        auto batch = subject.complete(prompt, options.temperature, options.n_samples,
                                      derive_seed(options.seed, "eval/" + q.question_id));
        r.completions = std::move(batch.completions);
        for (const auto& c : r.completions) {
            const char v = parse_answer(c);
            if (v != kUnparseable) r.votes.push_back(v);
        }
        r.final_answer = majority_vote(r.votes);
        r.correct = r.final_answer == *r.truth;
        if (append.is_open()) {
            std::lock_guard lock(append_mu);
            append << to_json(r).dump() << '\n';
            append.flush();
        }
        records[i] = std::move(r);
    });
    if (append.is_open()) append.close();

    std::sort(records.begin(), records.end(),
              [](const EvalRecord& a, const EvalRecord& b) { return a.question_id < b.question_id; });
    if (options.records_path) {
        std::vector<json> lines;
        for (const auto& r : records) lines.push_back(to_json(r));
        write_jsonl_atomic(*options.records_path, lines);
    }
    AdministerResult result;
    result.report = summarize(records, community_id, subject.id(), mode_name, skipped);
    result.records = std::move(records);
    return result;
}

std::vector<SurveyQuestion> collect_questions(std::span<const gen::SurveyEntry> entries) {
    std::map<std::string, SurveyQuestion> by_id;
    for (const auto& e : entries) {
        by_id.emplace(e.question_id(), SurveyQuestion{e.question_id(), e.query_id, e.topic_id, e.question, e.options});
    }
    std::vector<SurveyQuestion> out;
    for (auto& [id, q] : by_id) out.push_back(std::move(q));
    return out;
}

}  // namespace forge::eval
