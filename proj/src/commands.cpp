#include "ripple/commands.hpp"

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "ripple/checkpoint.hpp"
#include "ripple/editing.hpp"
#include "ripple/gradsim.hpp"
#include "ripple/metrics.hpp"
#include "ripple/model.hpp"
#include "ripple/ntk.hpp"
#include "ripple/rng.hpp"
#include "ripple/util.hpp"
#include "ripple/worldgen.hpp"

namespace ripple::cli {

namespace fs = std::filesystem;

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// Rejects keys that the command schema does not know. The schema is a JSON
// template: object values recurse, null accepts anything.
void validate_keys(const Config& config, const Config& schema, const std::string& prefix) {
    if (!config.is_object()) return;
    for (const auto& [key, value] : config.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!schema.is_object() || !schema.contains(key))
            throw std::invalid_argument("unknown config key '" + path + "'");
        const auto& s = schema.at(key);
        if (s.is_object()) {
            if (!value.is_object())
                throw std::invalid_argument("config key '" + path + "' must be an object");
            validate_keys(value, s, path);
        }
    }
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    out << content;
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::string out_path(const std::string& out_dir, const std::string& name) {
    return (fs::path(out_dir) / name).string();
}

// Reproducibility contract: every output directory carries the exact config
// that produced it.
void prepare_out_dir(const Config& config, const std::string& out_dir) {
    require(!out_dir.empty(), "output directory required");
    fs::create_directories(out_dir);
    write_file(out_path(out_dir, "config.json"), config.dump(2) + "\n");
}

std::uint64_t seed_of(const Config& config, std::uint64_t fallback = 0) {
    return config.value("seed", fallback);
}

struct WorldBundle {
    worldgen::World world;
    worldgen::FactCorpus corpus;
};

WorldBundle load_world_bundle(const std::string& world_path) {
    int num_languages = 1;
    int num_templates = 2;
    WorldBundle b;
    b.world = worldgen::world_from_json(read_file(world_path), &num_languages, &num_templates);
    b.corpus = worldgen::render_corpus(b.world, num_languages);
    return b;
}

std::vector<models::LmExample> corpus_examples(const worldgen::FactCorpus& corpus) {
    std::vector<models::LmExample> out;
    out.reserve(corpus.records.size());
    for (const auto& rec : corpus.records) out.push_back({rec.query, rec.answer});
    return out;
}

editing::EditConfig parse_edit_config(const Config& e, const models::Model& model) {
    editing::EditConfig cfg;
    const std::string method = e.value("method", "finetune");
    if (method == "finetune")
        cfg.method = editing::Method::Finetune;
    else if (method == "rank_one")
        cfg.method = editing::Method::RankOne;
    else
        throw std::invalid_argument("edit.method must be 'finetune' or 'rank_one'");
    cfg.steps = e.value("steps", std::int64_t{100});
    cfg.lr = e.value("lr", 0.5);
    const std::string filter = e.value("param_filter", "all");
    cfg.filter_desc = filter;
    if (filter == "all")
        cfg.filter = gradsim::all_params();
    else if (filter == "down_proj")
        cfg.filter = gradsim::down_proj_params(model);
    else
        cfg.filter = gradsim::name_prefix(filter);
    return cfg;
}

editing::EditOutcome run_editor(const models::Model& model, const worldgen::EditCase& ec,
                                const editing::EditConfig& cfg) {
    if (cfg.method == editing::Method::RankOne)
        return editing::rank_one_edit(model, ec.query, ec.new_answer, ec.subject_pos);
    return editing::finetune_edit(model, {{ec.query, ec.new_answer}}, cfg);
}

void parallel_for(size_t count, int threads, const std::function<void(size_t)>& fn) {
    if (count == 0) return;
    const int workers = std::max(1, std::min<int>(threads, static_cast<int>(count)));
    if (workers == 1) {
        for (size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::string> errors(count);
    auto body = [&]() {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                fn(i);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    for (size_t i = 0; i < count; ++i)
        if (!errors[i].empty())
            throw std::runtime_error("task " + std::to_string(i) + " failed: " + errors[i]);
}

}  // namespace

Config resolve_config(const std::string& config_path, const std::vector<std::string>& sets,
                      const std::string& seed_override) {
    Config config = Config::object();
    if (!config_path.empty()) {
        try {
            config = Config::parse(read_file(config_path));
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument("config file " + config_path + ": " + e.what());
        }
        require(config.is_object(), "config file must hold a JSON object");
    }
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        require(eq != std::string::npos && eq > 0, "--set expects key=value, got '" + kv + "'");
        const std::string key = kv.substr(0, eq);
        const std::string raw = kv.substr(eq + 1);
        Config value;
        try {
            value = Config::parse(raw);
        } catch (const nlohmann::json::exception&) {
            value = raw;  // unparsable values are plain strings
        }
        Config* node = &config;
        size_t start = 0;
        while (true) {
            const size_t dot = key.find('.', start);
            const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
            require(!part.empty(), "--set key has an empty path segment: '" + key + "'");
            if (dot == std::string::npos) {
                (*node)[part] = value;
                break;
            }
            node = &(*node)[part];
            if (!node->is_object()) *node = Config::object();
            start = dot + 1;
        }
    }
    if (!seed_override.empty()) {
        try {
            config["seed"] = static_cast<std::uint64_t>(std::stoull(seed_override));
        } catch (const std::exception&) {
            throw std::invalid_argument("--seed expects an integer, got '" + seed_override + "'");
        }
    }
    return config;
}

int worker_threads() {
    if (const char* env = std::getenv("RIPPLE_LAB_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

void cmd_gen_data(const Config& config, const std::string& out_dir) {
    static const Config schema = {{"seed", nullptr},
                                  {"num_persons", nullptr},
                                  {"num_countries", nullptr},
                                  {"num_languages", nullptr},
                                  {"num_edits", nullptr}};
    validate_keys(config, schema, "");
    const std::uint64_t seed = seed_of(config, 1);
    const int persons = config.value("num_persons", 10);
    const int countries = config.value("num_countries", 5);
    const int languages = config.value("num_languages", 2);
    const int num_edits = config.value("num_edits", 40);
    require(num_edits >= 1, "num_edits must be >= 1");

    const worldgen::World world = worldgen::generate_world(persons, countries, seed);
    const worldgen::FactCorpus corpus = worldgen::render_corpus(world, languages);
    require(num_edits <= persons * (countries - 1),
            "num_edits exceeds the number of distinct (person, new country) edits");

    std::vector<worldgen::EditCase> cases;
    for (int i = 0; i < num_edits; ++i) {
        const int person = i % persons;
        const int hop = 1 + i / persons;
        const int target = (world.citizen_of[static_cast<size_t>(person)] + hop) % countries;
        cases.push_back(worldgen::derive_ripples(world, corpus, person, target));
    }

    prepare_out_dir(config, out_dir);
    write_file(out_path(out_dir, "world.json"), worldgen::world_to_json(world, languages, corpus.num_templates));
    worldgen::save_corpus_jsonl(out_path(out_dir, "corpus.jsonl"), corpus);
    worldgen::save_cases_jsonl(out_path(out_dir, "cases.jsonl"), cases, corpus.vocab);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

void cmd_train(const Config& config, const std::string& out_dir) {
    static const Config schema = {
        {"seed", nullptr},
        {"world", nullptr},
        {"model",
         {{"d_model", nullptr}, {"n_layers", nullptr}, {"n_heads", nullptr}, {"d_ff", nullptr},
          {"max_seq_len", nullptr}}},
        {"train", {{"optimizer", nullptr}, {"lr", nullptr}, {"steps", nullptr}}}};
    validate_keys(config, schema, "");
    require(config.contains("world"), "train config needs 'world' (path to world.json)");

    WorldBundle bundle = load_world_bundle(config.at("world").get<std::string>());
    const Config mc = config.value("model", Config::object());
    models::LmConfig lm_cfg;
    lm_cfg.vocab_size = static_cast<std::int64_t>(bundle.corpus.vocab.tokens.size());
    lm_cfg.eos_token_id = bundle.corpus.vocab.eos_id;
    lm_cfg.d_model = mc.value("d_model", std::int64_t{64});
    lm_cfg.n_layers = mc.value("n_layers", 3);
    lm_cfg.n_heads = mc.value("n_heads", 4);
    lm_cfg.d_ff = mc.value("d_ff", std::int64_t{128});
    lm_cfg.max_seq_len = mc.value("max_seq_len", std::int64_t{32});

    const Config tc = config.value("train", Config::object());
    models::TrainConfig train_cfg;
    train_cfg.steps = tc.value("steps", std::int64_t{600});
    train_cfg.lr = tc.value("lr", 0.003);
    const std::string opt = tc.value("optimizer", "adam");
    require(opt == "adam" || opt == "gd", "train.optimizer must be 'adam' or 'gd'");
    train_cfg.optimizer = opt == "adam" ? models::Optimizer::Adam : models::Optimizer::Gd;

    const models::Model init = models::init_model(lm_cfg, seed_of(config, 7));
    const models::TrainResult result = models::train(init, corpus_examples(bundle.corpus), train_cfg);

    prepare_out_dir(config, out_dir);
    store::save_model(out_path(out_dir, "model.ckpt"), result.model);
    std::ostringstream loss_csv;
    loss_csv << "step,loss\n";
    for (size_t t = 0; t < result.loss_curve.size(); ++t)
        loss_csv << t << "," << util::fmt17(result.loss_curve[t]) << "\n";
    write_file(out_path(out_dir, "loss.csv"), loss_csv.str());
}

// ---------------------------------------------------------------------------
// edit
// ---------------------------------------------------------------------------

void cmd_edit(const Config& config, const std::string& out_dir) {
    static const Config schema = {
        {"seed", nullptr},
        {"world", nullptr},
        {"model", nullptr},
        {"cases", nullptr},
        {"case_index", nullptr},
        {"edit",
         {{"method", nullptr}, {"steps", nullptr}, {"lr", nullptr}, {"param_filter", nullptr}}}};
    validate_keys(config, schema, "");
    require(config.contains("world") && config.contains("model") && config.contains("cases"),
            "edit config needs 'world', 'model' and 'cases' paths");

    WorldBundle bundle = load_world_bundle(config.at("world").get<std::string>());
    const models::Model model = store::load_model(config.at("model").get<std::string>());
    const auto cases = worldgen::load_rippleedits_jsonl(config.at("cases").get<std::string>(),
                                                        bundle.corpus.vocab);
    const size_t case_index = config.value("case_index", size_t{0});
    require(case_index < cases.size(), "case_index out of range");
    const editing::EditConfig edit_cfg = parse_edit_config(config.value("edit", Config::object()), model);

    const editing::EditOutcome outcome = run_editor(model, cases[case_index], edit_cfg);

    prepare_out_dir(config, out_dir);
    store::save_model(out_path(out_dir, "edited.ckpt"), outcome.model);
    Config summary;
    summary["case_index"] = case_index;
    summary["pre_logprob"] = outcome.pre_logprob;
    summary["post_logprob"] = outcome.post_logprob;
    summary["located_layer"] = outcome.located_layer;
    summary["steps_used"] = outcome.steps_used;
    summary["final_loss"] = outcome.loss_curve.empty() ? Config(nullptr) : Config(outcome.loss_curve.back());
    write_file(out_path(out_dir, "outcome.json"), summary.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// gradsim
// ---------------------------------------------------------------------------

void cmd_gradsim(const Config& config, const std::string& out_dir) {
    static const Config schema = {{"seed", nullptr},
                                  {"world", nullptr},
                                  {"model", nullptr},
                                  {"cases", nullptr},
                                  {"filter", nullptr}};
    validate_keys(config, schema, "");
    require(config.contains("world") && config.contains("model") && config.contains("cases"),
            "gradsim config needs 'world', 'model' and 'cases' paths");

    WorldBundle bundle = load_world_bundle(config.at("world").get<std::string>());
    const models::Model model = store::load_model(config.at("model").get<std::string>());
    const auto cases = worldgen::load_rippleedits_jsonl(config.at("cases").get<std::string>(),
                                                        bundle.corpus.vocab);
    const std::string filter_name = config.value("filter", "all");
    gradsim::ParamFilter filter;
    gradsim::LayerMap map;
    if (filter_name == "all") {
        filter = gradsim::all_params();
        map = gradsim::model_layer_map(model);
    } else if (filter_name == "down_proj") {
        filter = gradsim::down_proj_params(model);
        map = gradsim::down_proj_layer_map(model);
    } else {
        throw std::invalid_argument("filter must be 'all' or 'down_proj'");
    }

    std::vector<std::vector<gradsim::GradSimRecord>> per_case(cases.size());
    parallel_for(cases.size(), worker_threads(), [&](size_t i) {
        const auto& ec = cases[i];
        const ad::GradientVector gx = gradsim::knowledge_gradient(model, ec.query, ec.new_answer, filter);
        for (const auto& rp : ec.ripples) {
            const ad::GradientVector gy = gradsim::knowledge_gradient(model, rp.query, rp.gold_post, filter);
            gradsim::GradSimRecord rec;
            rec.x_id = ec.edit_id;
            rec.y_id = rp.pair_id;
            rec.category = worldgen::to_string(rp.category);
            rec.gradsim = gradsim::grad_sim(gx, gy);
            rec.norm_x = gx.norm();
            rec.norm_y = gy.norm();
            rec.filter_desc = filter_name;
            rec.per_layer = gradsim::per_layer_gradsim(gx, gy, map);
            per_case[i].push_back(std::move(rec));
        }
    });

    std::vector<gradsim::GradSimRecord> records;
    for (auto& group : per_case)
        for (auto& rec : group) records.push_back(std::move(rec));

    prepare_out_dir(config, out_dir);
    std::ostringstream csv;
    gradsim::write_gradsim_csv(csv, records, map);
    write_file(out_path(out_dir, "gradsim.csv"), csv.str());
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

void cmd_eval(const Config& config, const std::string& out_dir) {
    static const Config schema = {
        {"seed", nullptr},
        {"world", nullptr},
        {"model", nullptr},
        {"cases", nullptr},
        {"edit",
         {{"method", nullptr}, {"steps", nullptr}, {"lr", nullptr}, {"param_filter", nullptr}}},
        {"em", {{"n_samples", nullptr}, {"temperature", nullptr}, {"max_len", nullptr}}}};
    validate_keys(config, schema, "");
    require(config.contains("world") && config.contains("model") && config.contains("cases"),
            "eval config needs 'world', 'model' and 'cases' paths");

    WorldBundle bundle = load_world_bundle(config.at("world").get<std::string>());
    const models::Model model = store::load_model(config.at("model").get<std::string>());
    const auto cases = worldgen::load_rippleedits_jsonl(config.at("cases").get<std::string>(),
                                                        bundle.corpus.vocab);
    require(!cases.empty(), "eval: no edit cases");
    const editing::EditConfig edit_cfg = parse_edit_config(config.value("edit", Config::object()), model);
    const Config em = config.value("em", Config::object());
    const int n_samples = em.value("n_samples", 50);
    const double temperature = em.value("temperature", 0.7);
    const std::int64_t max_len = em.value("max_len", std::int64_t{15});
    const std::uint64_t seed = seed_of(config, 99);

    struct OverRippleRow {
        std::string edit_id, pair_id;
        metrics::OverRippleStat stat;
    };
    std::vector<std::vector<metrics::MetricRow>> case_rows(cases.size());
    std::vector<std::vector<OverRippleRow>> case_over(cases.size());

    // Row GradSim follows the full-parameter default; the over-ripple columns
    // use the down-projection storage lens, where the edited target's
    // proximity separates most sharply.
    const gradsim::ParamFilter down_filter = gradsim::down_proj_params(model);

    parallel_for(cases.size(), worker_threads(), [&](size_t ci) {
        const auto& ec = cases[ci];
        const std::uint64_t case_seed = Rng::mix(seed, static_cast<std::uint64_t>(ci));
        const ad::GradientVector gx = gradsim::knowledge_gradient(model, ec.query, ec.new_answer);
        const ad::GradientVector gx_down =
            gradsim::knowledge_gradient(model, ec.query, ec.new_answer, down_filter);

        const editing::EditOutcome edited = run_editor(model, ec, edit_cfg);
        const double edit_em = metrics::em_rate(edited.model, ec.query, ec.new_answer, n_samples,
                                                temperature, max_len, Rng::mix(case_seed, 0));
        const double gain_x = metrics::abs_gain(model, edited.model, ec.query, ec.new_answer);

        for (size_t pi = 0; pi < ec.ripples.size(); ++pi) {
            const auto& rp = ec.ripples[pi];
            metrics::MetricRow row;
            row.edit_id = ec.edit_id;
            row.pair_id = rp.pair_id;
            row.category = rp.category;
            row.edit_em = edit_em;

            const ad::GradientVector gy = gradsim::knowledge_gradient(model, rp.query, rp.gold_post);
            row.gradsim = gradsim::grad_sim(gx, gy);
            const ad::GradientVector gy_down =
                gradsim::knowledge_gradient(model, rp.query, rp.gold_post, down_filter);
            row.gradsim_vs_gold = gradsim::grad_sim(gx_down, gy_down);
            if (rp.gold_post != ec.new_answer) {
                const ad::GradientVector gt_down =
                    gradsim::knowledge_gradient(model, rp.query, ec.new_answer, down_filter);
                row.gradsim_vs_edit_target = gradsim::grad_sim(gx_down, gt_down);
            } else {
                row.gradsim_vs_edit_target = row.gradsim_vs_gold;
            }

            row.em = metrics::em_rate(edited.model, rp.query, rp.gold_post, n_samples, temperature,
                                      max_len, Rng::mix(case_seed, 1 + pi),
                                      rp.expectation == worldgen::Expectation::ShouldAvoid);
            row.pre_logprob = models::lm_logprob(model, rp.query, rp.gold_post);
            row.post_logprob = models::lm_logprob(edited.model, rp.query, rp.gold_post);
            row.gain = row.post_logprob - row.pre_logprob;
            row.rel = metrics::rel_gain(row.gain, gain_x);
            case_rows[ci].push_back(row);

            if (rp.expectation == worldgen::Expectation::ShouldChange && rp.gold_post != ec.new_answer) {
                OverRippleRow orow;
                orow.edit_id = ec.edit_id;
                orow.pair_id = rp.pair_id;
                orow.stat = metrics::over_ripple_stat(edited.model, rp.query, ec.new_answer,
                                                      rp.gold_post, row.gradsim_vs_edit_target,
                                                      row.gradsim_vs_gold);
                case_over[ci].push_back(std::move(orow));
            }
        }
    });

    std::vector<metrics::MetricRow> rows;
    std::vector<OverRippleRow> over_rows;
    for (size_t ci = 0; ci < cases.size(); ++ci) {
        for (auto& r : case_rows[ci]) rows.push_back(std::move(r));
        for (auto& r : case_over[ci]) over_rows.push_back(std::move(r));
    }

    prepare_out_dir(config, out_dir);
    std::ostringstream csv;
    metrics::write_metric_csv(csv, rows);
    write_file(out_path(out_dir, "metrics.csv"), csv.str());

    std::ostringstream over_csv;
    over_csv << "edit_id,pair_id,logp_edit_target,logp_gold,gap,gradsim_vs_edit_target,"
                "gradsim_vs_gold,flagged\n";
    for (const auto& r : over_rows) {
        over_csv << r.edit_id << "," << r.pair_id << "," << util::fmt17(r.stat.logp_edit_target)
                 << "," << util::fmt17(r.stat.logp_gold) << "," << util::fmt17(r.stat.gap) << ","
                 << util::fmt17(r.stat.gradsim_vs_edit_target) << ","
                 << util::fmt17(r.stat.gradsim_vs_gold) << "," << (r.stat.flagged ? 1 : 0) << "\n";
    }
    write_file(out_path(out_dir, "over_ripple.csv"), over_csv.str());

    write_file(out_path(out_dir, "report.json"), metrics::report_to_json(metrics::build_report(rows)));
}

// ---------------------------------------------------------------------------
// ntk-scan
// ---------------------------------------------------------------------------

void cmd_ntk_scan(const Config& config, const std::string& out_dir) {
    static const Config schema = {
        {"seed", nullptr},          {"widths", nullptr},
        {"seeds_per_width", nullptr}, {"depth", nullptr},
        {"input_dim", nullptr},     {"pretrain_size", nullptr},
        {"edit_size", nullptr},     {"pretrain_max_steps", nullptr},
        {"pretrain_stop_loss", nullptr}, {"ke_steps", nullptr},
        {"data_seed", nullptr},     {"init_seed", nullptr},
        {"activation", nullptr}};
    validate_keys(config, schema, "");

    ntk::NtkRunConfig run;
    run.widths = config.value("widths", std::vector<std::int64_t>{64, 128, 256, 512, 1024, 2048});
    run.seeds_per_width = config.value("seeds_per_width", 5);
    run.depth = config.value("depth", 1);
    run.input_dim = config.value("input_dim", std::int64_t{16});
    run.pretrain_size = config.value("pretrain_size", std::int64_t{32});
    run.edit_size = config.value("edit_size", std::int64_t{8});
    run.pretrain_max_steps = config.value("pretrain_max_steps", std::int64_t{10000});
    run.pretrain_stop_loss = config.value("pretrain_stop_loss", 1e-6);
    run.ke_steps = config.value("ke_steps", std::int64_t{500});
    const std::uint64_t seed = seed_of(config, 1);
    run.data_seed = config.value("data_seed", Rng::mix(seed, 0xDA7AULL));
    run.init_seed = config.value("init_seed", Rng::mix(seed, 0x1217ULL));
    const std::string act = config.value("activation", "tanh");
    require(act == "tanh" || act == "relu", "activation must be 'tanh' or 'relu'");
    run.activation = act == "tanh" ? models::Activation::Tanh : models::Activation::Relu;

    const ntk::ScanResult result = ntk::width_scan(run, worker_threads());

    prepare_out_dir(config, out_dir);
    std::ostringstream csv;
    ntk::write_scan_csv(csv, result);
    write_file(out_path(out_dir, "scan.csv"), csv.str());
    write_file(out_path(out_dir, "summary.json"), ntk::scan_summary_json(result));
}

}  // namespace ripple::cli
