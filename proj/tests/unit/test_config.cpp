#include <doctest.h>

#include "forge/config.hpp"
#include "forge/errors.hpp"
#include "helpers.hpp"
#include "synthetic_domain.hpp"

using namespace forge;
using namespace forge::config;

namespace {

std::string error_of(const json& doc) {
    try {
        (void)parse_config(doc, "/base");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_CASE("fixture config parses with defaults filled in") {
    const auto cfg = parse_config(fixture::fixture_config({}), "/base/dir");
    CHECK(cfg.domain_name == "synthetic");
    CHECK(cfg.seed == 7);
    CHECK(cfg.run_dir == fs::path("/base/dir/run"));
    CHECK(cfg.communities.size() == 3);
    CHECK(cfg.communities[0].path == fs::path("/base/dir/data/c0.jsonl"));
    CHECK(cfg.community_ids() == std::vector<std::string>{"c0", "c1", "c2"});
    CHECK(cfg.backend("embed-mock")->dim == 64);
    CHECK(cfg.backend("nope") == nullptr);
    CHECK(cfg.generation.gen_retry == 2);
    CHECK(cfg.eval.n_samples == 20);
    CHECK(cfg.agreement.min_common == 5);
    CHECK(cfg.hash.size() == 64);
    CHECK(parse_config(fixture::fixture_config({}), "/elsewhere").hash == cfg.hash);
}

TEST_CASE("config problems are collected into one error") {
    auto doc = fixture::fixture_config({});
    doc["domain"].erase("seed");
    doc["communities"][1]["id"] = "c0";
    doc["split"]["ratio"] = 1.5;
    doc["generation"]["generator"] = "embed-mock";
    const auto msg = error_of(doc);
    CHECK(msg.find("domain.seed") != std::string::npos);
    CHECK(msg.find("duplicate") != std::string::npos);
    CHECK(msg.find("split.ratio") != std::string::npos);
    CHECK(msg.find("not a chat backend") != std::string::npos);
}

TEST_CASE("inline credentials are rejected") {
    auto doc = fixture::fixture_config({});
    doc["backends"].push_back({{"id", "remote"},
                               {"role", "chat"},
                               {"kind", "remote_http"},
                               {"base_url", "http://localhost:1/v1"},
                               {"model", "m"},
                               {"api_key", "sk-123"}});
    CHECK(error_of(doc).find("api_key") != std::string::npos);
    doc["backends"].back().erase("api_key");
    doc["backends"].back()["api_key_env"] = "SOME_KEY";
    CHECK(error_of(doc).empty());
}

TEST_CASE("single community and bad enums are config errors") {
    auto doc = fixture::fixture_config({});
    doc["communities"].erase(1);
    doc["communities"].erase(1);
    CHECK_FALSE(error_of(doc).empty());

    doc = fixture::fixture_config({});
    doc["eval"]["modes"] = {"plain", "shouting"};
    CHECK(error_of(doc).find("shouting") != std::string::npos);

    doc = fixture::fixture_config({});
    doc["topic_model"]["k"] = 0;
    CHECK(error_of(doc).find("topic_model.k") != std::string::npos);
}

TEST_CASE("load_config resolves paths against the file") {
    test::TempDir dir;
    const auto path = fixture::write_fixture(dir / "nested", {2, 2, 60, 1, 3});
    const auto cfg = load_config(path);
    CHECK(cfg.communities.size() == 2);
    CHECK(cfg.run_dir == dir / "nested/run");
    CHECK(fs::exists(cfg.communities[1].path));

    write_text_atomic(dir / "broken.json", "{ not json");
    CHECK_THROWS_AS((void)load_config(dir / "broken.json"), ConfigError);
    CHECK_THROWS_AS((void)load_config(dir / "missing.json"), ConfigError);
}
