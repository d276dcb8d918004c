#include <iostream>

#include <CLI11.hpp>

#include "synthetic_domain.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Writes the synthetic forum domain (raw exports and a mock-backend config)"};
    std::string out = "fixture";
    forge::fixture::FixtureSpec spec;
    app.add_option("--out", out, "Output directory");
    app.add_option("--communities", spec.communities, "Number of communities")->check(CLI::Range(2, 4));
    app.add_option("--topics", spec.topics, "Number of topics")->check(CLI::Range(2, 6));
    app.add_option("--docs", spec.docs_per_topic, "Documents per community and topic");
    app.add_option("--seed", spec.seed, "Seed");
    CLI11_PARSE(app, argc, argv);

    const auto config = forge::fixture::write_fixture(out, spec);
    std::cout << config.string() << "\n";
    return 0;
}
