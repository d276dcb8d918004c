#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "forge/config.hpp"
#include "forge/errors.hpp"
#include "forge/pipeline.hpp"

namespace {

using forge::pipeline::Stage;

struct Args {
    std::string config;
    std::string run_dir;
    bool force = false;
    bool verbose = false;
    bool quiet = false;
    std::size_t workers = 0;
    forge::pipeline::StageOptions stage;

    std::string import_assignments;
    std::string generator;
    std::string kind;
    double ratio = 0.0;
    std::string plan;
    std::string community;
    std::string subject;
    std::string mode;
    int samples = 0;
    double temperature = -1.0;
    long long context_k = -1;
    std::string run;
    std::string annotations;
};

forge::pipeline::Pipeline make_pipeline(const Args& a) {
    if (a.config.empty()) throw forge::ConfigError("--config is required");
    auto cfg = forge::config::load_config(a.config);
    if (!a.run_dir.empty()) cfg.run_dir = a.run_dir;
    if (a.workers > 0) cfg.workers = a.workers;
    return forge::pipeline::Pipeline(std::move(cfg));
}

forge::pipeline::StageOptions stage_options(const Args& a) {
    auto o = a.stage;
    o.force = a.force;
    if (!a.import_assignments.empty()) o.import_assignments = a.import_assignments;
    if (!a.generator.empty()) o.generator = a.generator;
    if (!a.kind.empty()) o.split_kinds = {a.kind};
    if (a.ratio > 0.0) o.ratio = a.ratio;
    if (!a.plan.empty()) o.plan = a.plan;
    if (!a.community.empty()) o.eval_communities = {a.community};
    if (!a.subject.empty()) o.subjects = {a.subject};
    if (!a.mode.empty()) o.modes = {a.mode};
    if (a.samples > 0) o.samples = a.samples;
    if (a.temperature >= 0.0) o.temperature = a.temperature;
    if (a.context_k >= 0) o.context_k = static_cast<std::size_t>(a.context_k);
    return o;
}

void print_result(const forge::pipeline::StageResult& r) {
    std::cout << forge::pipeline::to_string(r.stage) << ": "
              << (r.no_op ? "up to date" : "complete, " + std::to_string(r.backend_calls) + " backend calls") << "\n";
}

void print_matrix(const forge::agreement::AgreementMatrix& m) {
    std::cout << m.to_csv();
}

int run_command(const std::string& name, const Args& a) {
    if (name == "agreement" && a.config.empty()) {
        if (a.run.empty()) throw forge::ConfigError("agreement needs --config or --run");
        print_matrix(forge::pipeline::agreement_for_run(a.run));
        return 0;
    }
    if (name == "human-eval") {
        std::string run_dir = a.run;
        if (run_dir.empty()) {
            if (a.config.empty()) throw forge::ConfigError("human-eval needs --config or --run");
            auto cfg = forge::config::load_config(a.config);
            run_dir = a.run_dir.empty() ? cfg.run_dir.string() : a.run_dir;
        }
        forge::pipeline::RunLock lock(run_dir);
        const auto rows = forge::pipeline::human_eval_for_run(run_dir, a.annotations);
        for (const auto& r : rows) {
            std::cout << r.community_id << ": ";
            if (r.accuracy) {
                std::printf("%.3f (%zu/%zu)\n", *r.accuracy, r.matches, r.annotated);
                std::fflush(stdout);
            } else {
                std::cout << "NA\n";
            }
        }
        return 0;
    }

    auto p = make_pipeline(a);
    if (name == "backends") {
        int failures = 0;
        for (const auto& c : p.check_backends()) {
            std::cout << (c.ok ? "ok    " : "FAIL  ") << c.id << " (" << c.role << "): " << c.message << "\n";
            failures += c.ok ? 0 : 1;
        }
        return failures == 0 ? 0 : static_cast<int>(forge::ExitCode::Backend);
    }
    if (name == "status") {
        std::cout << p.manifest().to_json().dump(2) << "\n";
        return 0;
    }
    const auto options = stage_options(a);
    if (name == "run") {
        for (const auto& r : p.run_all(options)) print_result(r);
        return 0;
    }
    const auto stage = forge::pipeline::parse_stage(name);
    if (!stage) throw forge::Error("unknown command " + name);
    const auto r = p.run_stage(*stage, options);
    print_result(r);
    if (*stage == Stage::Agreement) {
        print_matrix(forge::pipeline::agreement_for_run(p.run_dir(), p.config().agreement.min_common));
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"forge: community instruction and survey dataset pipeline"};
    app.require_subcommand(1);
    app.fallthrough();
    Args a;

    app.add_option("--run-dir", a.run_dir, "Override the run directory from the config");
    app.add_option("--workers", a.workers, "Override the worker count");
    app.add_flag("-v,--verbose", a.verbose, "Debug logging");
    app.add_flag("-q,--quiet", a.quiet, "Warnings and errors only");

    const auto with_config = [&](CLI::App* sub, bool required = true) {
        auto* opt = sub->add_option("--config", a.config, "Domain config file (JSON)");
        if (required) opt->required();
        sub->add_flag("--force", a.force, "Rerun even if the stage is up to date");
        return sub;
    };

    auto* ingest = with_config(app.add_subcommand("ingest", "Clean raw exports into the document store"));
    ingest->add_flag("--skip-malformed", a.stage.skip_malformed, "Skip and report malformed lines");

    auto* topics = with_config(app.add_subcommand("topics", "Assign documents to topics"));
    topics->add_option("--import-assignments", a.import_assignments, "JSONL {doc_id, topic_id} from an external model");

    with_config(app.add_subcommand("chunks", "Cut per-community topic chunks"));

    auto* generate = with_config(app.add_subcommand("generate", "Generate instruction and survey pools"));
    generate->add_option("--generator", a.generator, "Generator backend id");

    auto* split = with_config(app.add_subcommand("split", "Split successful queries into train and test"));
    split->add_option("--kind", a.kind, "random or topicwise")->check(CLI::IsMember({"random", "topicwise"}));
    split->add_option("--ratio", a.ratio, "Train fraction")->check(CLI::Range(0.0, 1.0));

    auto* exp = with_config(app.add_subcommand("export", "Write finetuning files for each community"));
    exp->add_option("--plan", a.plan, "Split plan to export (default: every configured kind)");

    auto* ev = with_config(app.add_subcommand("eval", "Administer test surveys to subject backends"));
    ev->add_option("--community", a.community, "Community id (default: all)");
    ev->add_option("--subject", a.subject, "Subject backend id (default: eval.subjects)");
    ev->add_option("--mode", a.mode, "plain, steering, context or steering_context")
        ->check(CLI::IsMember({"plain", "steering", "context", "steering_context"}));
    ev->add_option("--samples", a.samples, "Completions per question");
    ev->add_option("--temperature", a.temperature, "Sampling temperature");
    ev->add_option("--context-k", a.context_k, "Retrieved comments in context modes");

    auto* agree = with_config(app.add_subcommand("agreement", "Pairwise Cohen's kappa between communities"), false);
    agree->add_option("--run", a.run, "Existing run directory (instead of --config)");

    auto* human = app.add_subcommand("human-eval", "Score human annotations against the pools");
    human->add_option("--annotations", a.annotations, "JSONL {community_id, question_id, answer}")->required();
    human->add_option("--config", a.config, "Domain config file");
    human->add_option("--run", a.run, "Existing run directory");

    auto* backends = with_config(app.add_subcommand("backends", "Backend utilities"));
    backends->add_subcommand("check", "Ping every configured backend")->required();
    backends->require_subcommand(1);
    backends->fallthrough();

    with_config(app.add_subcommand("run", "Run every stage in order"));
    with_config(app.add_subcommand("status", "Print the run manifest"));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(forge::ExitCode::Config);
    }

    spdlog::set_level(a.verbose ? spdlog::level::debug : a.quiet ? spdlog::level::warn : spdlog::level::info);
    spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");

    const auto* sub = app.get_subcommands().front();
    try {
        return run_command(sub->get_name(), a);
    } catch (const forge::Error& e) {
        spdlog::error("{}", e.what());
        return static_cast<int>(e.exit_code());
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return static_cast<int>(forge::ExitCode::Failure);
    }
}
