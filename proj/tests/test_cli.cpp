#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ripple/commands.hpp"
#include "ripple/worldgen.hpp"

using namespace ripple;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string sub(const std::string& name) const { return (path / name).string(); }
};

cli::Config gen_config() {
    return cli::Config{{"seed", 5}, {"num_persons", 3}, {"num_countries", 4},
                       {"num_languages", 2}, {"num_edits", 4}};
}

}  // namespace

TEST_CASE("resolve_config: --set overrides with dotted keys and JSON values") {
    const cli::Config cfg = cli::resolve_config(
        "", {"train.steps=25", "train.lr=0.5", "name=plain-string", "widths=[1,2,3]"}, "42");
    CHECK(cfg.at("train").at("steps") == 25);
    CHECK(cfg.at("train").at("lr") == 0.5);
    CHECK(cfg.at("name") == "plain-string");
    CHECK(cfg.at("widths").size() == 3);
    CHECK(cfg.at("seed") == 42);
    CHECK_THROWS_AS((void)cli::resolve_config("", {"no-equals-sign"}, ""), std::invalid_argument);
}

TEST_CASE("gen-data: deterministic artifacts, validation, reloadable cases") {
    TempDir tmp("ripple_cli_gen");
    cli::cmd_gen_data(gen_config(), tmp.sub("a"));
    cli::cmd_gen_data(gen_config(), tmp.sub("b"));
    for (const char* name : {"world.json", "corpus.jsonl", "cases.jsonl", "config.json"}) {
        CAPTURE(name);
        CHECK(slurp(tmp.path / "a" / name) == slurp(tmp.path / "b" / name));
    }

    // the emitted cases reload through the RippleEdits-format reader
    int langs = 0, tmpls = 0;
    const worldgen::World world =
        worldgen::world_from_json(slurp(tmp.path / "a" / "world.json"), &langs, &tmpls);
    const worldgen::FactCorpus corpus = worldgen::render_corpus(world, langs);
    const auto cases = worldgen::load_rippleedits_jsonl(tmp.sub("a") + "/cases.jsonl", corpus.vocab);
    REQUIRE(cases.size() == 4);
    const worldgen::EditCase derived = worldgen::derive_ripples(
        world, corpus, 0, (world.citizen_of[0] + 1) % world.num_countries);
    CHECK(cases[0] == derived);

    cli::Config bad = gen_config();
    bad["num_countries"] = 2;
    CHECK_THROWS_AS(cli::cmd_gen_data(bad, tmp.sub("c")), std::invalid_argument);

    cli::Config unknown = gen_config();
    unknown["persons"] = 3;
    CHECK_THROWS_WITH_AS(cli::cmd_gen_data(unknown, tmp.sub("d")),
                         doctest::Contains("unknown config key 'persons'"), std::invalid_argument);
}

TEST_CASE("train/edit/gradsim/eval pipeline: validation and byte-identical reruns") {
    TempDir tmp("ripple_cli_pipe");
    cli::cmd_gen_data(gen_config(), tmp.sub("data"));

    cli::Config train{{"seed", 11},
                      {"world", tmp.sub("data") + "/world.json"},
                      {"model", {{"d_model", 32}, {"n_layers", 2}, {"n_heads", 4}, {"d_ff", 64},
                                 {"max_seq_len", 24}}},
                      {"train", {{"optimizer", "adam"}, {"lr", 0.004}, {"steps", 220}}}};
    cli::cmd_train(train, tmp.sub("run"));
    CHECK(fs::exists(tmp.path / "run" / "model.ckpt"));
    CHECK(fs::exists(tmp.path / "run" / "loss.csv"));

    cli::Config edit{{"world", tmp.sub("data") + "/world.json"},
                     {"model", tmp.sub("run") + "/model.ckpt"},
                     {"cases", tmp.sub("data") + "/cases.jsonl"},
                     {"case_index", 1},
                     {"edit", {{"method", "finetune"}, {"steps", 40}, {"lr", 0.3}}}};
    SUBCASE("edit with T=0 is rejected up front") {
        cli::Config bad = edit;
        bad["edit"]["steps"] = 0;
        CHECK_THROWS_AS(cli::cmd_edit(bad, tmp.sub("edit0")), std::invalid_argument);
    }
    SUBCASE("edit emits an edited checkpoint and an outcome summary") {
        cli::cmd_edit(edit, tmp.sub("edit"));
        CHECK(fs::exists(tmp.path / "edit" / "edited.ckpt"));
        const std::string summary = slurp(tmp.path / "edit" / "outcome.json");
        CHECK(summary.find("post_logprob") != std::string::npos);
    }
    SUBCASE("gradsim and eval rerun byte-identically under a fixed seed") {
        cli::Config gs{{"world", tmp.sub("data") + "/world.json"},
                       {"model", tmp.sub("run") + "/model.ckpt"},
                       {"cases", tmp.sub("data") + "/cases.jsonl"},
                       {"filter", "down_proj"}};
        cli::cmd_gradsim(gs, tmp.sub("gs1"));
        cli::cmd_gradsim(gs, tmp.sub("gs2"));
        CHECK(slurp(tmp.path / "gs1" / "gradsim.csv") == slurp(tmp.path / "gs2" / "gradsim.csv"));
        const std::string head = slurp(tmp.path / "gs1" / "gradsim.csv");
        CHECK(head.rfind("x_id,y_id,category,gradsim,norm_x,norm_y", 0) == 0);

        cli::Config eval{{"seed", 3},
                         {"world", tmp.sub("data") + "/world.json"},
                         {"model", tmp.sub("run") + "/model.ckpt"},
                         {"cases", tmp.sub("data") + "/cases.jsonl"},
                         {"edit", {{"method", "finetune"}, {"steps", 30}, {"lr", 0.3}}},
                         {"em", {{"n_samples", 8}, {"temperature", 0.7}, {"max_len", 6}}}};
        cli::cmd_eval(eval, tmp.sub("ev1"));
        cli::cmd_eval(eval, tmp.sub("ev2"));
        for (const char* name : {"metrics.csv", "report.json", "over_ripple.csv"}) {
            CAPTURE(name);
            CHECK(slurp(tmp.path / "ev1" / name) == slurp(tmp.path / "ev2" / name));
        }
        // row count: one line per (case, ripple pair) plus the header
        const std::string metrics_csv = slurp(tmp.path / "ev1" / "metrics.csv");
        const auto lines = static_cast<size_t>(std::count(metrics_csv.begin(), metrics_csv.end(), '\n'));
        int langs = 0;
        const worldgen::World world =
            worldgen::world_from_json(slurp(tmp.path / "data" / "world.json"), &langs, nullptr);
        const worldgen::FactCorpus corpus = worldgen::render_corpus(world, langs);
        const auto cases = worldgen::load_rippleedits_jsonl(tmp.sub("data") + "/cases.jsonl", corpus.vocab);
        size_t pairs = 0;
        for (const auto& ec : cases) pairs += ec.ripples.size();
        CHECK(lines == pairs + 1);
    }
}

TEST_CASE("ntk-scan command writes the pinned CSV schema and a verdict") {
    TempDir tmp("ripple_cli_ntk");
    cli::Config cfg{{"seed", 2},       {"widths", {32, 64}},     {"seeds_per_width", 2},
                    {"depth", 1},      {"input_dim", 4},         {"pretrain_size", 6},
                    {"edit_size", 3},  {"pretrain_max_steps", 300}, {"ke_steps", 40}};
    cli::cmd_ntk_scan(cfg, tmp.sub("scan1"));
    cli::cmd_ntk_scan(cfg, tmp.sub("scan2"));
    const std::string csv = slurp(tmp.path / "scan1" / "scan.csv");
    CHECK(csv.rfind("width,seed,norm,lambda_min,lambda_max,eta,decay_c,decay_r2\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 2 widths x 2 seeds
    CHECK(csv == slurp(tmp.path / "scan2" / "scan.csv"));
    const std::string summary = slurp(tmp.path / "scan1" / "summary.json");
    CHECK(summary == slurp(tmp.path / "scan2" / "summary.json"));

    // verdict is "pass" exactly when the slope sits in the acceptance band
    const auto parsed = cli::Config::parse(summary);
    const double slope = parsed.at("slope").get<double>();
    const bool in_band = slope >= -0.75 && slope <= -0.25;
    CHECK(parsed.at("verdict").get<std::string>() == (in_band ? "pass" : "fail"));
}
