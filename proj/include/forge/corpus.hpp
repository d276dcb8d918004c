#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "forge/common.hpp"

namespace forge::corpus {

// Kept for statistics only; downstream stages treat both kinds as comments.
enum class Kind { Comment, Submission };

[[nodiscard]] std::string_view to_string(Kind kind) noexcept;
[[nodiscard]] std::optional<Kind> parse_kind(std::string_view s) noexcept;

inline constexpr int kNoiseTopic = -1;

struct Document {
    std::string doc_id;
    std::string community_id;
    std::string text;
    std::optional<std::int64_t> created_at;
    Kind kind = Kind::Comment;
    std::optional<int> topic_id;  // unset until topics are assigned; -1 = noise
};

struct CommunityCorpus {
    std::string community_id;
    std::string display_name;
    std::vector<Document> documents;  // ingestion order
};

struct CleaningRules {
    std::set<std::string> deletion_markers{"[deleted]", "[removed]"};
    bool skip_malformed = false;
};

struct MalformedLine {
    std::size_t line = 0;
    std::string message;
};

struct IngestReport {
    std::size_t records = 0;
    std::size_t retained = 0;
    std::size_t dropped_deleted = 0;
    std::size_t dropped_empty = 0;
    std::vector<MalformedLine> malformed;

    [[nodiscard]] std::size_t dropped() const noexcept { return dropped_deleted + dropped_empty; }
    [[nodiscard]] json to_json() const;
};

struct IngestResult {
    CommunityCorpus corpus;
    IngestReport report;
};

// Document ids are namespaced by community so raw ids from different exports
// cannot collide.
[[nodiscard]] std::string make_doc_id(std::string_view community_id, std::string_view raw_id);

// Reads a raw JSONL export ({"id", "body", "created_utc"?, "kind"?}) and drops
// deleted, removed and blank records. Malformed lines throw InputError unless
// rules.skip_malformed is set, in which case they are reported and skipped.
[[nodiscard]] IngestResult ingest_corpus(const fs::path& path, const std::string& community_id,
                                         const CleaningRules& rules = {});

struct StatsReport {
    std::size_t comments = 0;
    std::size_t submissions = 0;

    [[nodiscard]] std::size_t total() const noexcept { return comments + submissions; }
    [[nodiscard]] json to_json() const;
};

[[nodiscard]] StatsReport corpus_stats(const CommunityCorpus& corpus);

// Document store: <run_dir>/corpus/<community_id>.jsonl
[[nodiscard]] fs::path store_path(const fs::path& run_dir, std::string_view community_id);
[[nodiscard]] json to_json(const Document& doc);
[[nodiscard]] Document document_from_json(const json& j);
void write_store(const fs::path& run_dir, const CommunityCorpus& corpus);
[[nodiscard]] CommunityCorpus load_store(const fs::path& run_dir, const std::string& community_id,
                                         const std::string& display_name);

}  // namespace forge::corpus
