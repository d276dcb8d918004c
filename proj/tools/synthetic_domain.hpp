#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "forge/common.hpp"

// Synthetic forum domain used by the tests and the fixture tool: a few
// communities talking about the same topics with disjoint vocabularies, so
// the mock embedder can separate the topics.
namespace forge::fixture {

struct FixtureSpec {
    std::size_t communities = 3;
    std::size_t topics = 4;
    std::size_t docs_per_topic = 300;  // retained documents per (community, topic)
    std::size_t deleted_per_topic = 3;  // extra "[deleted]" records, dropped at ingest
    std::uint64_t seed = 7;
};

[[nodiscard]] std::vector<std::string> community_ids(const FixtureSpec& spec);

// Raw export lines for one community.
[[nodiscard]] std::vector<json> community_records(const FixtureSpec& spec, std::size_t community);

// Config document using mock backends only. `data_dir` is where the raw
// exports live, relative to the config file.
[[nodiscard]] json fixture_config(const FixtureSpec& spec, const std::string& data_dir = "data",
                                  const std::string& run_dir = "run");

// Writes <dir>/data/<community>.jsonl and <dir>/forge.json; returns the config path.
fs::path write_fixture(const fs::path& dir, const FixtureSpec& spec = {});

}  // namespace forge::fixture
