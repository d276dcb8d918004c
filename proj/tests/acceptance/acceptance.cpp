// Acceptance checks. Prints one line per criterion and exits nonzero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "forge/agreement_stats.hpp"
#include "forge/config.hpp"
#include "forge/dataset_split.hpp"
#include "forge/errors.hpp"
#include "forge/instruct_gen.hpp"
#include "forge/pipeline.hpp"
#include "forge/survey_eval.hpp"
#include "forge/topic_model.hpp"
#include "synthetic_domain.hpp"

using namespace forge;

namespace {

constexpr double kRuntimeLimitSeconds = 60.0;
constexpr double kKappaTolerance = 1e-9;
constexpr double kRandomSubjectTolerance = 0.05;
constexpr int kSimulationTrials = 10000;

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok && pass) {
            pass = false;
            detail = what;
        }
    }
};

class ScratchDir {
public:
    ScratchDir() {
        std::string tmpl = (fs::temp_directory_path() / "forge-accept-XXXXXX").string();
        if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
        path_ = tmpl;
    }
    ~ScratchDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    [[nodiscard]] const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

// Every regular file under the given run subdirectories, relative path -> bytes.
std::map<std::string, std::string> snapshot(const fs::path& run_dir, const std::vector<std::string>& subdirs) {
    std::map<std::string, std::string> out;
    for (const auto& sub : subdirs) {
        if (!fs::exists(run_dir / sub)) continue;
        for (const auto& e : fs::recursive_directory_iterator(run_dir / sub)) {
            if (e.is_regular_file()) out[fs::relative(e.path(), run_dir).string()] = read_text(e.path());
        }
    }
    return out;
}

struct FixtureRun {
    config::Config cfg;
    double seconds = 0.0;
};

FixtureRun full_run(const fs::path& dir, const fixture::FixtureSpec& spec) {
    const auto path = fixture::write_fixture(dir, spec);
    FixtureRun run{config::load_config(path), 0.0};
    const auto start = std::chrono::steady_clock::now();
    pipeline::Pipeline p(run.cfg);
    (void)p.run_all();
    run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return run;
}

const std::vector<std::string> kDeterministicOutputs{"comminst", "commsurvey", "generation", "split",
                                                     "export",   "eval",       "agreement"};

Outcome criterion1(const FixtureRun& a, const FixtureRun& b) {
    Outcome o;
    const auto sa = snapshot(a.cfg.run_dir, kDeterministicOutputs);
    const auto sb = snapshot(b.cfg.run_dir, kDeterministicOutputs);
    std::size_t reports = 0;
    for (const auto& [rel, bytes] : sa) reports += rel.ends_with(".report.json") ? 1 : 0;
    o.require(!sa.empty() && reports > 0, "no outputs produced");
    o.require(sa.size() == sb.size(), "runs produced different file sets");
    for (const auto& [rel, bytes] : sa) {
        const auto it = sb.find(rel);
        o.require(it != sb.end() && it->second == bytes, "file differs between runs: " + rel);
    }
    const double slowest = std::max(a.seconds, b.seconds);
    o.require(slowest < kRuntimeLimitSeconds, "run took " + std::to_string(slowest) + " s");
    std::ostringstream d;
    d << sa.size() << " files identical (" << reports << " reports), slowest run " << std::fixed;
    d.precision(2);
    d << slowest << " s";
    if (o.pass) o.detail = d.str();
    return o;
}

Outcome criterion2(const FixtureRun& run) {
    Outcome o;
    std::map<std::string, std::size_t> queries_with;
    std::size_t ok_queries = 0;
    for (const auto& entry : gen::read_query_ledger(run.cfg.run_dir / "generation/queries.jsonl")) {
        if (!entry.ok) continue;
        ++ok_queries;
        for (const auto& c : entry.query.communities()) ++queries_with[c];
    }
    o.require(ok_queries > 0, "no successful queries");
    for (const auto& c : run.cfg.community_ids()) {
        const auto inst = read_jsonl(run.cfg.run_dir / "comminst" / (c + ".jsonl")).size();
        const auto survey = read_jsonl(run.cfg.run_dir / "commsurvey" / (c + ".jsonl")).size();
        o.require(inst == 3 * queries_with[c], c + ": CommInst size " + std::to_string(inst));
        o.require(survey == 2 * queries_with[c], c + ": CommSurvey size " + std::to_string(survey));
    }
    if (o.pass) o.detail = std::to_string(ok_queries) + " queries, identities exact for every community";
    return o;
}

Outcome criterion3() {
    Outcome o;
    Rng rng(20240601);
    constexpr int kCases = 250;
    for (int trial = 0; trial < kCases && o.pass; ++trial) {
        const std::size_t n = 2 + rng.below(4);
        const int n_topics = 1 + static_cast<int>(rng.below(4));
        std::vector<corpus::Document> docs;
        std::map<std::pair<std::string, int>, std::size_t> counts;
        for (std::size_t c = 0; c < n; ++c) {
            const auto cid = "c" + std::to_string(c);
            for (int t = -1; t < n_topics; ++t) {
                const auto count = rng.uniform() < 0.2 ? 0 : rng.below(420);
                if (t >= 0) counts[{cid, t}] = count;
                for (std::uint64_t i = 0; i < count; ++i) {
                    corpus::Document d;
                    d.community_id = cid;
                    d.doc_id = cid + "/" + std::to_string(t) + "-" + std::to_string(i);
                    d.text = "x";
                    d.topic_id = t;
                    docs.push_back(std::move(d));
                }
            }
        }
        const auto chunks = topics::build_chunks(docs, 50, 5, rng.next());

        std::map<std::pair<std::string, int>, std::size_t> chunk_counts;
        std::set<std::string> used_docs;
        std::map<std::string, const topics::Chunk*> by_id;
        for (const auto& ch : chunks) {
            ++chunk_counts[{ch.community_id, ch.topic_id}];
            by_id[ch.chunk_id] = &ch;
            o.require(ch.doc_ids.size() == 50, "chunk of wrong size");
            for (const auto& d : ch.doc_ids) o.require(used_docs.insert(d).second, "document in two chunks");
        }
        for (const auto& [key, count] : counts) {
            o.require(chunk_counts[key] == std::min<std::size_t>(5, count / 50),
                      "chunk count for " + key.first + "/" + std::to_string(key.second));
        }

        topics::ChunkCounts per_topic;
        for (const auto& [key, count] : chunk_counts) {
            if (count > 0) per_topic[key.second][key.first] = count;
        }
        const auto retained = topics::retain_topics(per_topic, n);
        const auto queries = gen::plan_queries(chunks, retained, {}, n, rng.next());

        // Replay the queries against the chunk inventory.
        std::map<int, std::map<std::string, std::size_t>> remaining;
        for (int t : retained) remaining[t] = per_topic[t];
        std::set<std::string> consumed;
        std::map<int, std::size_t> queries_per_topic;
        for (const auto& q : queries) {
            ++queries_per_topic[q.topic_id];
            std::size_t holders = 0;
            for (const auto& [c, left] : remaining[q.topic_id]) holders += left > 0 ? 1 : 0;
            o.require(holders >= n - 1, "query issued with fewer than n-1 holders");
            o.require(q.participants.size() == holders, "query skipped a community that still had chunks");
            for (const auto& [c, chunk_id] : q.participants) {
                o.require(consumed.insert(chunk_id).second, "chunk consumed twice: " + chunk_id);
                const auto it = by_id.find(chunk_id);
                o.require(it != by_id.end() && it->second->community_id == c && it->second->topic_id == q.topic_id,
                          "participant chunk mismatch");
                --remaining[q.topic_id][c];
            }
        }
        for (int t : retained) {
            std::size_t holders = 0;
            for (const auto& [c, left] : remaining[t]) holders += left > 0 ? 1 : 0;
            o.require(holders < n - 1, "loop stopped early on topic " + std::to_string(t));
        }
    }
    if (o.pass) o.detail = std::to_string(kCases) + " randomized corpora";
    return o;
}

Outcome criterion4() {
    Outcome o;
    auto level = spdlog::get_level();
    spdlog::set_level(spdlog::level::err);
    Rng rng(99);
    constexpr int kCases = 300;
    for (int trial = 0; trial < kCases; ++trial) {
        const std::size_t q = 2 + rng.below(300);
        const int n_topics = 2 + static_cast<int>(rng.below(12));
        std::vector<split::QueryRef> refs;
        for (std::size_t i = 0; i < q; ++i) {
            // First n_topics queries cover every topic, the rest are skewed.
            const int t = i < static_cast<std::size_t>(n_topics)
                              ? static_cast<int>(i)
                              : static_cast<int>(rng.below(static_cast<std::uint64_t>(n_topics)) *
                                                 rng.below(static_cast<std::uint64_t>(n_topics)) %
                                                 static_cast<std::uint64_t>(n_topics));
            refs.push_back({"q" + std::to_string(i), t});
        }
        const auto seed = rng.next();
        const auto random = split::split_random(refs, 0.85, seed);
        const double target = std::round(0.85 * static_cast<double>(q));
        o.require(std::abs(static_cast<double>(random.train_query_ids.size()) - target) <= 1.0,
                  "random split size off for Q=" + std::to_string(q));
        o.require(random.train_query_ids.size() + random.test_query_ids.size() == q, "random split lost queries");

        const auto topicwise = split::split_topicwise(refs, 0.85, seed);
        std::set<int> train_topics;
        std::set<int> test_topics;
        for (const auto& r : refs) (topicwise.in_train(r.query_id) ? train_topics : test_topics).insert(r.topic_id);
        for (int t : train_topics) o.require(!test_topics.contains(t), "topic on both sides");
    }
    spdlog::set_level(level);
    if (o.pass) o.detail = std::to_string(kCases) + " randomized instances";
    return o;
}

double brute_force_kappa(const std::vector<char>& a, const std::vector<char>& b) {
    const double n = static_cast<double>(a.size());
    double agree = 0;
    for (std::size_t i = 0; i < a.size(); ++i) agree += a[i] == b[i] ? 1 : 0;
    double chance = 0;
    for (char c : {'A', 'B', 'C', 'D'}) {
        chance += static_cast<double>(std::count(a.begin(), a.end(), c)) *
                  static_cast<double>(std::count(b.begin(), b.end(), c));
    }
    const double po = agree / n;
    const double pe = chance / (n * n);
    return pe == 1.0 ? 1.0 : (po - pe) / (1.0 - pe);
}

Outcome criterion5() {
    Outcome o;
    Rng rng(5);
    double worst = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const auto n = 1 + rng.below(60);
        std::vector<char> a(n);
        std::vector<char> b(n);
        const double agree = rng.uniform();
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = static_cast<char>('A' + rng.below(4));
            b[i] = rng.uniform() < agree ? a[i] : static_cast<char>('A' + rng.below(4));
        }
        worst = std::max(worst, std::abs(agreement::cohen_kappa(a, b) - brute_force_kappa(a, b)));
        o.require(agreement::cohen_kappa(a, a) == 1.0, "kappa(x, x) != 1");
    }
    o.require(worst <= kKappaTolerance, "max deviation " + std::to_string(worst));
    const std::vector<char> x{'A', 'A', 'B', 'B'};
    const std::vector<char> y{'A', 'B', 'B', 'B'};
    o.require(agreement::cohen_kappa(x, y) == 0.5, "hand case is not 0.5");
    if (o.pass) {
        std::ostringstream d;
        d << "200 sequences, max deviation " << worst << ", hand case 0.5";
        o.detail = d.str();
    }
    return o;
}

Outcome criterion6(const FixtureRun& run) {
    Outcome o;
    Rng rng(6);
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<char> votes(1 + rng.below(30));
        for (auto& v : votes) v = static_cast<char>('A' + rng.below(4));
        const char w = eval::majority_vote(votes);
        const auto freq = [&](char c) { return std::count(votes.begin(), votes.end(), c); };
        for (char c = 'A'; c <= 'D'; ++c) o.require(freq(w) >= freq(c), "majority_vote did not return a mode");
    }
    o.require(eval::majority_vote(std::vector<char>{'B', 'A'}) == 'A', "tie A/B");
    o.require(eval::majority_vote(std::vector<char>{'D', 'C', 'D', 'C', 'A'}) == 'C', "tie C/D");
    o.require(eval::majority_vote(std::vector<char>{'D', 'B', 'C', 'A'}) == 'A', "four-way tie");
    o.require(eval::majority_vote(std::vector<char>{}) == eval::kAbstain, "empty votes do not abstain");

    o.require(eval::parse_answer("B") == 'B', "bare letter");
    o.require(eval::parse_answer("b.") == 'B', "letter with punctuation");
    o.require(eval::parse_answer("I believe the answer is C because of the comments") == 'C', "answer-is phrase");
    o.require(eval::parse_answer("none of these") == eval::kUnparseable, "unparseable text");

    // Report formula on every eval report of the fixture run.
    std::size_t reports = 0;
    for (const auto& e : fs::recursive_directory_iterator(run.cfg.run_dir / "eval")) {
        if (!e.path().string().ends_with(".report.json")) continue;
        ++reports;
        const auto report = read_json(e.path());
        const auto records_path = fs::path(e.path().string().substr(0, e.path().string().size() - 12) + ".jsonl");
        std::size_t correct = 0;
        std::size_t incorrect = 0;
        std::size_t abstained = 0;
        for (const auto& r : read_jsonl(records_path)) {
            if (r["final"] == "ABSTAIN") {
                ++abstained;
            } else if (r["final"] == r["truth"]) {
                ++correct;
            } else {
                ++incorrect;
            }
        }
        const auto& counts = report["counts"];
        o.require(counts["correct"] == correct && counts["incorrect"] == incorrect && counts["abstained"] == abstained,
                  "report counts disagree with records in " + e.path().filename().string());
        const auto denom = correct + incorrect + abstained;
        if (denom > 0) {
            o.require(report["accuracy"].get<double>() == static_cast<double>(correct) / static_cast<double>(denom),
                      "accuracy formula in " + e.path().filename().string());
        }
    }
    eval::EvalRecord abstain;
    abstain.truth = 'A';
    abstain.final_answer = eval::kAbstain;
    eval::EvalRecord right = abstain;
    right.final_answer = 'A';
    const std::vector<eval::EvalRecord> records{abstain, right};
    const auto report = eval::summarize(records, "c", "s", "plain", 0);
    o.require(report.accuracy() == 0.5, "abstention not counted in the denominator");
    o.require(reports > 0, "no eval reports in the fixture run");
    if (o.pass) o.detail = "votes, ties, parsing and " + std::to_string(reports) + " reports checked";
    return o;
}

Outcome criterion7() {
    Outcome o;
    auto backend = std::make_shared<llm::MockEmbeddingBackend>("embed", 64, 17);
    llm::EmbeddingCache cache(backend, std::nullopt);
    const std::vector<std::string> vocab{"tax",   "budget", "vaccine", "clinic", "solar",   "wind",  "coach",
                                         "draft", "rent",   "zoning",  "exams",  "college", "prices", "jobs"};
    Rng rng(7);
    std::vector<eval::Candidate> docs;
    for (int i = 0; i < 1000; ++i) {
        std::string text;
        for (int w = 0; w < 6; ++w) text += vocab[rng.below(vocab.size())] + " ";
        char id[16];
        std::snprintf(id, sizeof id, "doc%04d", i);
        docs.push_back({id, text});
    }
    for (int q = 0; q < 5; ++q) {
        std::string query;
        for (int w = 0; w < 4; ++w) query += vocab[rng.below(vocab.size())] + " ";
        const auto got = eval::retrieve_context(query, docs, 5, cache);

        // Exhaustive ranking with separately computed embeddings.
        const auto qv = backend->embed_one(query);
        std::vector<std::pair<double, std::string>> all;
        for (const auto& d : docs) {
            const auto dv = backend->embed_one(d.text);
            double dot = 0;
            double nq = 0;
            double nd = 0;
            for (std::size_t i = 0; i < qv.size(); ++i) {
                dot += qv[i] * dv[i];
                nq += qv[i] * qv[i];
                nd += dv[i] * dv[i];
            }
            all.emplace_back(-(dot / (std::sqrt(nq) * std::sqrt(nd))), d.doc_id);
        }
        std::sort(all.begin(), all.end());
        o.require(got.size() == 5, "wrong result size");
        for (std::size_t i = 0; i < got.size() && i < 5; ++i) {
            o.require(got[i].doc_id == all[i].second, "rank " + std::to_string(i) + " differs for query " + query);
        }
    }
    if (o.pass) o.detail = "5 queries over 1000 docs match exhaustive ranking";
    return o;
}

// Items for every community: all survey questions in its own pool, truth = its answer.
std::map<std::string, std::vector<eval::AdministeredItem>> all_items(const config::Config& cfg) {
    std::map<std::string, std::vector<eval::AdministeredItem>> out;
    const auto ids = cfg.community_ids();
    const auto pools = gen::Pools::load(cfg.run_dir, ids);
    for (const auto& c : ids) {
        for (const auto& s : pools.commsurvey(c)) {
            out[c].push_back({{s.question_id(), s.query_id, s.topic_id, s.question, s.options}, s.answer, {}});
        }
    }
    return out;
}

const std::vector<eval::ModeKind> kModes{eval::ModeKind::Plain, eval::ModeKind::Steering, eval::ModeKind::Context,
                                         eval::ModeKind::SteeringContext};

Outcome criterion8(const FixtureRun& run) {
    Outcome o;
    const auto items = all_items(run.cfg);
    std::size_t total = 0;
    std::size_t truth_a = 0;
    std::array<std::size_t, 4> truth_counts{};
    for (const auto& [c, list] : items) {
        for (const auto& it : list) {
            total += kModes.size();
            truth_a += *it.truth == 'A' ? kModes.size() : 0;
            truth_counts[static_cast<std::size_t>(*it.truth - 'A')] += kModes.size();
        }
    }

    std::size_t lookup_correct = 0;
    std::size_t constant_correct = 0;
    std::size_t random_correct = 0;
    for (const auto& [c, list] : items) {
        const auto* spec = run.cfg.community(c);
        std::map<std::string, char> truth_by_prompt;
        for (auto mode_kind : kModes) {
            const eval::EvalMode mode{mode_kind, spec->display_name, 0};
            for (const auto& it : list) {
                const auto prompt = eval::build_survey_prompt(it.question, mode, it.context);
                const auto [pos, fresh] = truth_by_prompt.emplace(prompt, *it.truth);
                o.require(fresh || pos->second == *it.truth, "two items share a prompt but not a truth");
            }
            llm::MockChatBackend lookup("lookup", [&](const std::string& prompt, std::uint64_t, int) {
                return std::string(1, truth_by_prompt.at(prompt));
            });
            llm::MockChatBackend constant("constant", llm::constant_responder("A"));
            llm::MockChatBackend uniform("uniform", [](const std::string& prompt, std::uint64_t seed, int index) {
                Rng r(derive_seed(seed, llm::prompt_fingerprint(prompt) + "/" + std::to_string(index)));
                return std::string(1, static_cast<char>('A' + r.below(4)));
            });
            eval::AdministerOptions opts;
            opts.seed = run.cfg.seed;
            opts.workers = 4;
            lookup_correct += eval::administer(list, c, lookup, mode, opts).report.counts.correct;
            constant_correct += eval::administer(list, c, constant, mode, opts).report.counts.correct;
            random_correct += eval::administer(list, c, uniform, mode, opts).report.counts.correct;
        }
    }
    const auto t = static_cast<double>(total);
    const double lookup_acc = static_cast<double>(lookup_correct) / t;
    const double constant_acc = static_cast<double>(constant_correct) / t;
    const double random_acc = static_cast<double>(random_correct) / t;

    // Simulated winner distribution of 20 uniform votes with alphabetical ties.
    Rng sim(424242);
    std::array<double, 4> win{};
    for (int trial = 0; trial < kSimulationTrials; ++trial) {
        std::vector<char> votes(20);
        for (auto& v : votes) v = static_cast<char>('A' + sim.below(4));
        win[static_cast<std::size_t>(eval::majority_vote(votes) - 'A')] += 1.0 / kSimulationTrials;
    }
    double expected = 0;
    for (std::size_t l = 0; l < 4; ++l) expected += win[l] * static_cast<double>(truth_counts[l]) / t;

    o.require(total >= 400, "too few items: " + std::to_string(total));
    o.require(lookup_correct == total, "lookup subject accuracy " + std::to_string(lookup_acc));
    o.require(constant_correct == truth_a, "constant-A accuracy differs from the A-truth fraction");
    o.require(std::abs(random_acc - expected) <= kRandomSubjectTolerance,
              "uniform subject " + std::to_string(random_acc) + " vs expected " + std::to_string(expected));
    std::ostringstream d;
    d << std::fixed;
    d.precision(3);
    d << total << " items; lookup " << lookup_acc << ", constant-A " << constant_acc << " (A-truth "
      << static_cast<double>(truth_a) / t << "), uniform " << random_acc << " vs simulated " << expected;
    if (o.pass) o.detail = d.str();
    return o;
}

Outcome criterion9(const FixtureRun& run) {
    Outcome o;
    const auto check = [&](const agreement::AgreementMatrix& m, const std::string& label) {
        const auto n = m.communities.size();
        for (std::size_t i = 0; i < n; ++i) {
            o.require(m.values[i][i] == 1.0, label + ": diagonal is not 1");
            for (std::size_t j = 0; j < n; ++j) {
                o.require(m.values[i][j] == m.values[j][i], label + ": not symmetric");
                if (m.values[i][j]) {
                    o.require(*m.values[i][j] >= -1.0 && *m.values[i][j] <= 1.0, label + ": entry out of range");
                }
            }
        }
    };
    const auto m = pipeline::agreement_for_run(run.cfg.run_dir, run.cfg.agreement.min_common);
    check(m, "fixture");
    std::size_t defined = 0;
    for (const auto& row : m.values) {
        for (const auto& v : row) defined += v ? 1 : 0;
    }
    o.require(defined > m.communities.size(), "no off-diagonal kappa defined");

    // Identical pools: every community answers like c0.
    const auto pools = gen::Pools::load(run.cfg.run_dir, run.cfg.community_ids());
    agreement::SurveyPools same;
    for (const auto& c : run.cfg.community_ids()) {
        for (auto s : pools.commsurvey("c0")) {
            s.community_id = c;
            same[c].push_back(s);
        }
    }
    const auto ident = agreement::agreement_matrix(same, run.cfg.agreement.min_common);
    check(ident, "identical");
    for (std::size_t i = 0; i < ident.communities.size(); ++i) {
        for (std::size_t j = 0; j < ident.communities.size(); ++j) {
            o.require(ident.values[i][j] == 1.0, "identical pools give a non-unit entry");
        }
    }
    if (o.pass) o.detail = "fixture matrix valid; identical pools give 1.0 everywhere";
    return o;
}

Outcome criterion10(const FixtureRun& run, const fs::path& scratch) {
    Outcome o;
    const auto pool = read_jsonl(run.cfg.run_dir / "commsurvey/c0.jsonl");
    o.require(pool.size() >= 20, "c0 pool has fewer than 20 items");
    if (!o.pass) return o;

    std::vector<json> truth;
    for (const auto& r : pool) truth.push_back({{"community_id", "c0"}, {"question_id", r["question_id"]}, {"answer", r["answer"]}});
    write_jsonl_atomic(scratch / "truth.jsonl", truth);
    auto rows = pipeline::human_eval_for_run(run.cfg.run_dir, scratch / "truth.jsonl");
    o.require(!rows.empty() && rows[0].community_id == "c0" && rows[0].accuracy == 1.0, "ground truth is not 1.0");

    std::vector<json> partial(truth.begin(), truth.begin() + 20);
    for (std::size_t i = 15; i < 20; ++i) {
        const char a = partial[i]["answer"].get<std::string>()[0];
        partial[i]["answer"] = std::string(1, static_cast<char>('A' + (a - 'A' + 1) % 4));
    }
    write_jsonl_atomic(scratch / "partial.jsonl", partial);
    rows = pipeline::human_eval_for_run(run.cfg.run_dir, scratch / "partial.jsonl");
    o.require(rows[0].annotated == 20 && rows[0].matches == 15 && rows[0].accuracy == 0.75, "15/20 is not 0.75");
    for (std::size_t i = 1; i < rows.size(); ++i) o.require(!rows[i].accuracy, "unannotated community is not NA");
    if (o.pass) o.detail = "ground truth 1.0, 15/20 gives 0.75";
    return o;
}

Outcome guarded(const std::function<Outcome()>& f) {
    try {
        return f();
    } catch (const std::exception& e) {
        return {false, std::string("exception: ") + e.what()};
    }
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::warn);
    ScratchDir scratch;

    const fixture::FixtureSpec standard{3, 4, 300, 3, 7};
    std::optional<FixtureRun> first;
    std::optional<FixtureRun> second;
    std::optional<FixtureRun> wide;
    std::string setup_error;
    try {
        first = full_run(scratch.path() / "first", standard);
        second = full_run(scratch.path() / "second", standard);
        // Four communities for the oracle subjects: more items per mode.
        wide = full_run(scratch.path() / "wide", {4, 4, 300, 3, 7});
    } catch (const std::exception& e) {
        setup_error = e.what();
    }
    const auto needs_runs = [&](auto f) {
        return [&, f] { return setup_error.empty() ? f() : Outcome{false, "fixture run failed: " + setup_error}; };
    };

    const std::vector<std::function<Outcome()>> criteria{
        needs_runs([&] { return criterion1(*first, *second); }),
        needs_runs([&] { return criterion2(*first); }),
        [] { return criterion3(); },
        [] { return criterion4(); },
        [] { return criterion5(); },
        needs_runs([&] { return criterion6(*first); }),
        [] { return criterion7(); },
        needs_runs([&] { return criterion8(*wide); }),
        needs_runs([&] { return criterion9(*first); }),
        needs_runs([&] { return criterion10(*first, scratch.path()); }),
    };

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto o = guarded(criteria[i]);
        std::printf("criterion %zu: %s - %s\n", i + 1, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        failures += o.pass ? 0 : 1;
    }
    std::fflush(stdout);
    return failures == 0 ? 0 : 1;
}
