#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "egocast/error.hpp"
#include "egocast/log.hpp"
#include "egocast/parallel.hpp"
#include "egocast/pipeline.hpp"

namespace fs = std::filesystem;
using namespace egocast;

namespace {

struct Common {
    std::string config_file;
    std::string data;
    std::string out;
    std::string variant;
    std::uint64_t seed = 7;
    unsigned threads = 0;
    std::vector<std::string> settings;
    // training overrides
    double learning_rate = 0;
    int n_estimators = 0;
    int max_depth = 0;
    bool verbose = false;
    bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_file, "key=value configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--data", c.data, "directory holding the input layers");
    cmd->add_option("--out", c.out, "output directory");
    cmd->add_option("--variant", c.variant, "model variant: property, full or open");
    cmd->add_option("--seed", c.seed, "random seed");
    cmd->add_option("--threads", c.threads, "worker threads (default: all cores)");
    cmd->add_option("--set", c.settings, "override a configuration key (key=value), repeatable");
    cmd->add_flag("-v,--verbose", c.verbose, "debug logging");
    cmd->add_flag("-q,--quiet", c.quiet, "warnings only");
}

void add_training(CLI::App* cmd, Common& c) {
    cmd->add_option("--learning-rate", c.learning_rate, "boosting learning rate");
    cmd->add_option("--n-estimators", c.n_estimators, "maximum number of trees");
    cmd->add_option("--max-depth", c.max_depth, "maximum tree depth");
}

RunConfig resolve(const CLI::App* cmd, const Common& c) {
    RunConfig cfg;
    cfg.threads = default_threads();
    cfg.train.threads = cfg.threads;
    if (!c.config_file.empty()) cfg.load_file(c.config_file);
    auto given = [&](const char* name) { return cmd->get_option_no_throw(name) && cmd->count(name) > 0; };
    if (given("--data")) cfg.data_dir = c.data;
    if (given("--out")) cfg.out_dir = c.out;
    if (given("--variant")) cfg.variant = parse_variant(c.variant);
    if (given("--seed")) cfg.set("seed", std::to_string(c.seed));
    if (given("--threads")) cfg.set("threads", std::to_string(c.threads));
    if (given("--learning-rate")) cfg.train.learning_rate = c.learning_rate;
    if (given("--n-estimators")) cfg.train.n_estimators = c.n_estimators;
    if (given("--max-depth")) cfg.train.max_depth = c.max_depth;
    for (const auto& s : c.settings) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + s + "'");
        cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (cfg.data_dir == ".") cfg.data_dir = cfg.out_dir;
    cfg.train.validate();
    if (c.verbose) log::set_level(log::Level::Debug);
    if (c.quiet) log::set_level(log::Level::Warn);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"egocast: egohood features, spatially cross-validated boosted trees and price explanations"};
    app.require_subcommand(1);

    Common common;
    SynthSpec spec;
    std::string synth_out = "city";
    auto* synth = app.add_subcommand("synth", "generate a synthetic city with priced listings");
    add_common(synth, common);
    synth->add_option("--blocks", spec.blocks, "number of census blocks");
    synth->add_option("--listings", spec.listings, "number of listings");
    synth->add_option("--noise", spec.noise_scale, "multiplicative price noise (sd)");
    synth->add_option("--neighborhood-share", spec.neighborhood_variance_share,
                      "share of price variance carried by neighborhood features");
    synth->add_option("--missing-rate", spec.missing_rate, "missing rate of optional attributes");
    double amenity_scale = 1.0;
    synth->add_option("--amenity-scale", amenity_scale, "multiplier on every amenity density");

    auto* ingest = app.add_subcommand("ingest", "filter listings and assign ego-places");
    auto* features = app.add_subcommand("features", "compute the per-block feature table");
    auto* egohood = app.add_subcommand("egohood", "aggregate egohood features and assemble the design matrix");
    auto* folds = app.add_subcommand("folds", "spatial 5-fold assignment with buffer constraints");
    auto* train = app.add_subcommand("train", "train one model per rotation for a variant");
    auto* evaluate = app.add_subcommand("evaluate", "compare trained variants on the hold-out sets");
    auto* nowcast = app.add_subcommand("nowcast", "predict prices for new listings");
    auto* explain = app.add_subcommand("explain", "explain one prediction as bias plus feature contributions");
    for (auto* cmd : {ingest, features, egohood, folds, train, evaluate, nowcast, explain}) add_common(cmd, common);
    add_training(train, common);

    std::string nowcast_listings, nowcast_output;
    nowcast->add_option("--listings", nowcast_listings, "listings CSV (asked_price may be empty)")
        ->required()
        ->check(CLI::ExistingFile);
    nowcast->add_option("--output", nowcast_output, "output CSV (default: <out>/<variant>/nowcast.csv)");

    std::string listing_id;
    int rotation = -1;
    explain->add_option("--listing", listing_id, "listing id")->required();
    explain->add_option("--rotation", rotation, "rotation whose model is used (default: the hold-out one)");

    CLI11_PARSE(app, argc, argv);

    try {
        CLI::App* cmd = app.get_subcommands().front();
        const RunConfig cfg = resolve(cmd, common);
        if (cmd == synth) {
            spec.seed = cfg.seed;
            for (auto& [c, d] : spec.density_per_km2) d *= amenity_scale;
            stage_synth(spec, cmd->count("--out") ? fs::path(common.out) : fs::path(synth_out), cfg.threads);
        } else if (cmd == ingest) {
            stage_ingest(cfg);
        } else if (cmd == features) {
            stage_features(cfg);
        } else if (cmd == egohood) {
            stage_egohood(cfg);
        } else if (cmd == folds) {
            stage_folds(cfg);
        } else if (cmd == train) {
            stage_train(cfg);
        } else if (cmd == evaluate) {
            const std::string report = stage_evaluate(cfg);
            log::info("report written to ", (cfg.out_dir / "report.txt").string(), "\n", report);
        } else if (cmd == nowcast) {
            const fs::path output = nowcast_output.empty()
                                        ? cfg.out_dir / std::string(to_string(cfg.variant)) / "nowcast.csv"
                                        : fs::path(nowcast_output);
            stage_nowcast(cfg, nowcast_listings, output);
        } else if (cmd == explain) {
            const std::string text =
                stage_explain(cfg, listing_id, rotation >= 0 ? std::optional<int>(rotation) : std::nullopt);
            log::info("explanation written to ",
                      (cfg.out_dir / std::string(to_string(cfg.variant)) / ("explain_" + listing_id + ".txt")).string(),
                      "\n", text);
        }
    } catch (const StaleArtifactError& e) {
        std::cerr << "egocast: stale input: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "egocast: error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
