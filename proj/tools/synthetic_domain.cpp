#include "synthetic_domain.hpp"

#include <array>

namespace forge::fixture {

namespace {

const std::array<std::vector<std::string>, 6> kTopicWords{{
    {"tax",      "budget",    "inflation", "wages",    "deficit",  "tariff",   "recession", "jobs",
     "interest", "mortgage",  "spending",  "debt",     "market",   "prices",   "payroll",   "subsidy",
     "income",   "treasury",  "economy",   "savings"},
    {"hospital", "insurance", "doctors",   "nurses",   "vaccine",  "clinic",   "premiums",  "medicare",
     "patients", "pharmacy",  "coverage",  "surgery",  "diagnosis", "therapy", "medicine",  "prescription",
     "dental",   "wellness",  "treatment", "emergency"},
    {"climate",  "carbon",    "emissions", "solar",    "wind",     "warming",  "drought",   "wildfire",
     "glacier",  "pollution", "recycling", "renewable", "coal",    "flooding", "ecosystem", "forest",
     "methane",  "battery",   "electric",  "hurricane"},
    {"football", "playoffs",  "coach",     "stadium",  "league",   "season",   "referee",   "quarterback",
     "tickets",  "draft",     "injury",    "championship", "fans", "scoring",  "defense",   "roster",
     "trade",    "rookie",    "tournament", "goalie"},
    {"school",   "teachers",  "tuition",   "students", "classroom", "exams",   "curriculum", "college",
     "homework", "principal", "campus",    "grades",   "textbook", "lecture",  "semester",  "diploma",
     "literacy", "scholarship", "district", "kindergarten"},
    {"housing",  "rent",      "landlord",  "zoning",   "tenants",  "apartment", "eviction", "suburb",
     "commute",  "transit",   "downtown",  "neighborhood", "developer", "condo", "shelter",  "permit",
     "density",  "parking",   "lease",     "homeowner"},
}};

const std::array<std::vector<std::string>, 4> kCommunityWords{{
    {"freedom", "liberty", "tradition", "family", "faith", "values"},
    {"fairness", "equity", "community", "progress", "justice", "solidarity"},
    {"evidence", "balance", "pragmatic", "moderate", "compromise", "nuance"},
    {"local", "practical", "honest", "simple", "common", "everyday"},
}};

const std::array<std::string, 4> kCommunityNames{"Northside", "Southside", "Midtown", "Harbor"};

const std::array<std::string, 6> kOpeners{"I think", "Honestly", "In my view", "Look,", "My take:", "Frankly"};

std::string pick(const std::vector<std::string>& words, Rng& rng) {
    return words[static_cast<std::size_t>(rng.below(words.size()))];
}

}  // namespace

std::vector<std::string> community_ids(const FixtureSpec& spec) {
    std::vector<std::string> out;
    for (std::size_t c = 0; c < spec.communities; ++c) out.push_back("c" + std::to_string(c));
    return out;
}

std::vector<json> community_records(const FixtureSpec& spec, std::size_t community) {
    Rng rng(derive_seed(spec.seed, "fixture/" + std::to_string(community)));
    const auto& flavor = kCommunityWords[community % kCommunityWords.size()];

    struct Pending {
        std::size_t topic;
        bool deleted;
    };
    std::vector<Pending> order;
    for (std::size_t t = 0; t < spec.topics; ++t) {
        for (std::size_t i = 0; i < spec.docs_per_topic; ++i) order.push_back({t, false});
        for (std::size_t i = 0; i < spec.deleted_per_topic; ++i) order.push_back({t, true});
    }
    rng.shuffle(order);

    std::vector<json> out;
    std::size_t serial = 0;
    for (const auto& p : order) {
        json r;
        r["id"] = "p" + std::to_string(serial);
        r["created_utc"] = 1600000000 + static_cast<std::int64_t>(serial) * 97;
        r["kind"] = serial % 17 == 0 ? "submission" : "comment";
        ++serial;
        if (p.deleted) {
            r["body"] = serial % 2 == 0 ? "[deleted]" : "[removed]";
            out.push_back(std::move(r));
            continue;
        }
        const auto& vocab = kTopicWords[p.topic % kTopicWords.size()];
        std::string text = kOpeners[static_cast<std::size_t>(rng.below(kOpeners.size()))];
        const auto words = 8 + rng.below(8);
        for (std::uint64_t w = 0; w < words; ++w) {
            text += ' ';
            text += rng.uniform() < 0.8 ? pick(vocab, rng) : pick(flavor, rng);
        }
        text += '.';
        r["body"] = std::move(text);
        out.push_back(std::move(r));
    }
    return out;
}

json fixture_config(const FixtureSpec& spec, const std::string& data_dir, const std::string& run_dir) {
    json communities = json::array();
    for (std::size_t c = 0; c < spec.communities; ++c) {
        const auto id = "c" + std::to_string(c);
        const auto name = c < kCommunityNames.size() ? kCommunityNames[c] : "Community" + std::to_string(c);
        communities.push_back({{"id", id}, {"display_name", name}, {"path", data_dir + "/" + id + ".jsonl"}});
    }
    return {
        {"domain", {{"name", "synthetic"}, {"seed", spec.seed}, {"run_dir", run_dir}, {"workers", 4}}},
        {"communities", communities},
        {"backends",
         json::array({
             {{"id", "embed-mock"}, {"role", "embedding"}, {"kind", "mock"}, {"dim", 64}},
             {{"id", "gen-mock"}, {"role", "chat"}, {"kind", "mock"}, {"mock", {{"mode", "rule"}}}},
             {{"id", "subject-mock"}, {"role", "chat"}, {"kind", "mock"}, {"mock", {{"mode", "rule"}}}},
         })},
        {"topic_model",
         {{"provider", "kmeans"},
          {"embedder", "embed-mock"},
          {"k", static_cast<int>(spec.topics)},
          {"min_topic_size", 40},
          {"chunk_size", 50},
          {"max_chunks", 5}}},
        {"generation", {{"generator", "gen-mock"}}},
        {"split", {{"kinds", {"random", "topicwise"}}, {"ratio", 0.85}, {"validation_fraction", 0.05}}},
        {"eval",
         {{"subjects", {"subject-mock"}},
          {"modes", {"plain", "steering", "context", "steering_context"}},
          {"embedder", "embed-mock"},
          {"context_k", 300}}},
    };
}

fs::path write_fixture(const fs::path& dir, const FixtureSpec& spec) {
    for (std::size_t c = 0; c < spec.communities; ++c) {
        const auto records = community_records(spec, c);
        write_jsonl_atomic(dir / "data" / ("c" + std::to_string(c) + ".jsonl"), records);
    }
    const auto path = dir / "forge.json";
    write_json_atomic(path, fixture_config(spec));
    return path;
}

}  // namespace forge::fixture
