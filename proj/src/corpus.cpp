#include "forge/corpus.hpp"

#include <fstream>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "forge/errors.hpp"

namespace forge::corpus {

std::string_view to_string(Kind kind) noexcept {
    return kind == Kind::Submission ? "submission" : "comment";
}

std::optional<Kind> parse_kind(std::string_view s) noexcept {
    if (s == "comment") return Kind::Comment;
    if (s == "submission") return Kind::Submission;
    return std::nullopt;
}

json IngestReport::to_json() const {
    json malformed_lines = json::array();
    for (const auto& m : malformed) malformed_lines.push_back({{"line", m.line}, {"message", m.message}});
    return {{"records", records},
            {"retained", retained},
            {"dropped", dropped()},
            {"dropped_deleted", dropped_deleted},
            {"dropped_empty", dropped_empty},
            {"malformed", malformed_lines}};
}

std::string make_doc_id(std::string_view community_id, std::string_view raw_id) {
    std::string id(community_id);
    id += '/';
    id += raw_id;
    return id;
}

namespace {

// Validates one raw record. Returns an error message, or empty on success.
std::string parse_record(const std::string& line, json& out) {
    try {
        out = json::parse(line);
    } catch (const json::parse_error& e) {
        return std::string("invalid JSON: ") + e.what();
    }
    if (!out.is_object()) return "record is not an object";
    if (!out.contains("id") || !(out["id"].is_string() || out["id"].is_number_integer())) {
        return "missing or invalid \"id\"";
    }
    if (!out.contains("body") || !out["body"].is_string()) return "missing or invalid \"body\"";
    if (out.contains("created_utc") && !out["created_utc"].is_null() &&
        !out["created_utc"].is_number_integer()) {
        return "\"created_utc\" must be an integer";
    }
    if (out.contains("kind") && !(out["kind"].is_string() && parse_kind(out["kind"].get<std::string>()))) {
        return "\"kind\" must be \"comment\" or \"submission\"";
    }
    return {};
}

}  // namespace

IngestResult ingest_corpus(const fs::path& path, const std::string& community_id,
                           const CleaningRules& rules) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open corpus file: " + path.string());

    IngestResult result;
    result.corpus.community_id = community_id;
    auto& report = result.report;

    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        ++report.records;

        json rec;
        std::string err = parse_record(line, rec);
        std::string raw_id;
        if (err.empty()) {
            raw_id = rec["id"].is_string() ? rec["id"].get<std::string>() : std::to_string(rec["id"].get<long long>());
            if (!seen.insert(raw_id).second) err = "duplicate id \"" + raw_id + "\"";
        }
        if (!err.empty()) {
            if (!rules.skip_malformed) {
                throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + err, line_no);
            }
            report.malformed.push_back({line_no, err});
            continue;
        }

        const auto body = rec["body"].get<std::string>();
        const auto trimmed = trim(body);
        if (trimmed.empty()) {
            ++report.dropped_empty;
            continue;
        }
        if (rules.deletion_markers.contains(trimmed)) {
            ++report.dropped_deleted;
            continue;
        }

        Document doc;
        doc.doc_id = make_doc_id(community_id, raw_id);
        doc.community_id = community_id;
        doc.text = body;
        if (rec.contains("created_utc") && rec["created_utc"].is_number_integer()) {
            doc.created_at = rec["created_utc"].get<std::int64_t>();
        }
        if (rec.contains("kind")) doc.kind = *parse_kind(rec["kind"].get<std::string>());
        result.corpus.documents.push_back(std::move(doc));
    }
    report.retained = result.corpus.documents.size();
    if (!report.malformed.empty()) {
        spdlog::warn("{}: skipped {} malformed line(s)", path.string(), report.malformed.size());
    }
    return result;
}

json StatsReport::to_json() const {
    return {{"comments", comments}, {"submissions", submissions}, {"total", total()}};
}

StatsReport corpus_stats(const CommunityCorpus& corpus) {
    StatsReport stats;
    for (const auto& doc : corpus.documents) {
        if (doc.kind == Kind::Submission) {
            ++stats.submissions;
        } else {
            ++stats.comments;
        }
    }
    return stats;
}

fs::path store_path(const fs::path& run_dir, std::string_view community_id) {
    return run_dir / "corpus" / (std::string(community_id) + ".jsonl");
}

json to_json(const Document& doc) {
    json j = {{"doc_id", doc.doc_id},
              {"community_id", doc.community_id},
              {"text", doc.text},
              {"kind", to_string(doc.kind)}};
    if (doc.created_at) j["created_at"] = *doc.created_at;
    if (doc.topic_id) j["topic_id"] = *doc.topic_id;
    return j;
}

Document document_from_json(const json& j) {
    Document doc;
    doc.doc_id = j.at("doc_id").get<std::string>();
    doc.community_id = j.at("community_id").get<std::string>();
    doc.text = j.at("text").get<std::string>();
    if (auto k = parse_kind(j.value("kind", "comment"))) doc.kind = *k;
    if (j.contains("created_at")) doc.created_at = j["created_at"].get<std::int64_t>();
    if (j.contains("topic_id")) doc.topic_id = j["topic_id"].get<int>();
    return doc;
}

void write_store(const fs::path& run_dir, const CommunityCorpus& corpus) {
    std::vector<json> records;
    records.reserve(corpus.documents.size());
    for (const auto& doc : corpus.documents) {
        if (doc.community_id != corpus.community_id) {
            throw IntegrityError("document " + doc.doc_id + " does not belong to " + corpus.community_id);
        }
        records.push_back(to_json(doc));
    }
    write_jsonl_atomic(store_path(run_dir, corpus.community_id), records);
}

CommunityCorpus load_store(const fs::path& run_dir, const std::string& community_id,
                           const std::string& display_name) {
    CommunityCorpus corpus{community_id, display_name, {}};
    for (const auto& rec : read_jsonl(store_path(run_dir, community_id))) {
        auto doc = document_from_json(rec);
        if (doc.community_id != community_id) {
            throw IntegrityError("document " + doc.doc_id + " in store of " + community_id);
        }
        corpus.documents.push_back(std::move(doc));
    }
    return corpus;
}

}  // namespace forge::corpus
