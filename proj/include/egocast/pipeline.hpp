#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "egocast/egohood.hpp"
#include "egocast/evaluation.hpp"
#include "egocast/features.hpp"
#include "egocast/gbt.hpp"
#include "egocast/geomodel.hpp"
#include "egocast/spatialcv.hpp"

namespace egocast {

// ---------------------------------------------------------------------------
// Model variants
// ---------------------------------------------------------------------------

enum class Variant { Property, Full, Open };
inline constexpr std::array<Variant, 3> kVariants{Variant::Property, Variant::Full, Variant::Open};

/// "property", "full", "open".
std::string_view to_string(Variant v);
/// Row label for comparison tables.
std::string_view variant_label(Variant v);
/// Accepts the short names and the long forms property+neighborhood(-open).
Variant parse_variant(std::string_view s);

/// Columns withheld from the Open variant: security perception and property taxes.
bool closed_data_column(const DesignColumn& c);

/// Indices of the design columns a variant keeps, in design order.
std::vector<std::size_t> variant_columns(const std::vector<DesignColumn>& columns, Variant v);

/// Importance grouping per column: "property" / "neighborhood" when coarse,
/// otherwise "property" / "ego_place" / "egohood".
std::vector<std::string> column_groups(const std::vector<DesignColumn>& columns, bool coarse = true);

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct RunConfig {
    std::filesystem::path data_dir = ".";
    std::filesystem::path out_dir = "run";
    WalkParams walk;
    double egohood_radius_m = kEgohoodRadiusM;
    double tile_side_m = kTileSideM;
    gbt::TrainConfig train;
    Variant variant = Variant::Full;
    std::uint64_t seed = 7;
    unsigned threads = 1;
    std::optional<std::chrono::sys_days> reference_date;  // latest posting date when unset
    int max_age_days = 365;

    /// Applies one `key=value` setting. Throws ValidationError on unknown keys or bad values.
    void set(std::string_view key, std::string_view value);
    /// Flat key=value file; blank lines and `#` comments ignored.
    void load_file(const std::filesystem::path& path);
    /// Canonical key=value listing of every setting (stable order).
    std::map<std::string, std::string> describe() const;
};

// ---------------------------------------------------------------------------
// Synthetic city
// ---------------------------------------------------------------------------

struct SynthSpec {
    std::size_t blocks = 2000;
    double block_side_m = 250.0;
    LonLat origin{7.62, 45.02};
    std::size_t listings = 10000;
    std::map<AmenityCategory, double> density_per_km2;  // defaults filled by the constructor
    double security_spacing_m = 100.0;
    double companies_per_km2 = 40.0;
    double landuse_cell_m = 500.0;
    double neighborhood_variance_share = 0.7;  // Var(g) / Var(f + g)
    double noise_scale = 0.05;                 // multiplicative Gaussian noise sd
    double missing_rate = 0.08;                // per optional attribute
    std::string reference_date = "2026-06-30";
    std::uint64_t seed = 7;

    SynthSpec();
    void validate() const;
};

/// One neighborhood term of the generative price: weight * s(x), where s is
/// the column min-max scaled over listings (flipped when `invert`).
struct OracleTerm {
    std::string column;  // qualified design column, e.g. "egohood:walk_coffee"
    double weight = 0.0;
    double lo = 0.0;
    double hi = 1.0;
    bool invert = false;
};

struct SynthOracle {
    double intercept = 0.0;
    std::map<std::string, double> property_weights;  // qualified property design columns
    std::vector<OracleTerm> neighborhood;
    double neighborhood_scale = 1.0;  // already folded into the term weights
    double noise_scale = 0.0;
    double variance_share = 0.0;      // realized Var(g) / Var(f + g)
    std::uint64_t seed = 0;

    /// Noise-free price split into the property part f and neighborhood part g.
    std::pair<double, double> components(const DesignMatrix& dm, std::size_t row) const;
    double price(const DesignMatrix& dm, std::size_t row) const;
};

void write_oracle(const std::filesystem::path& path, const SynthOracle& oracle);
SynthOracle read_oracle(const std::filesystem::path& path);

/// Generates blocks, a lattice road network, amenities, a land-use mosaic,
/// security points, companies and priced listings. Prices follow the oracle,
/// evaluated on features computed by this library.
CityDataset synth_city(const SynthSpec& spec, SynthOracle* oracle = nullptr, unsigned threads = 1);

// ---------------------------------------------------------------------------
// In-memory experiment
// ---------------------------------------------------------------------------

struct Prepared {
    CityDataset dataset;   // listings filtered and assigned
    FeatureTable place;    // F
    FeatureTable egohood;  // E
    DesignMatrix design;   // priced listings only
    FoldAssignment folds;
    DiscardStats discards;
};

FilterRules filter_rules(const RunConfig& config, const std::vector<Listing>& listings);

/// Filtering, ego-place assignment, F, E, design matrix and constrained folds.
Prepared prepare(CityDataset dataset, const RunConfig& config);

struct VariantRun {
    Variant variant = Variant::Full;
    std::vector<std::size_t> columns;  // design columns used
    std::vector<gbt::TreeEnsemble> models;  // one per rotation
    std::vector<RotationPredictions> holdout;
    RunReport report;
};

/// Trains one model per rotation on kept training rows, early-stops on kept
/// validation rows and predicts the kept hold-out rows.
VariantRun run_variant(const DesignMatrix& design, const FoldAssignment& folds, Variant variant,
                       const gbt::TrainConfig& config);

// ---------------------------------------------------------------------------
// Stage files and manifests
// ---------------------------------------------------------------------------

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

struct Manifest {
    std::string stage;
    std::map<std::string, std::string> config;
    std::map<std::string, std::string> inputs;   // file name -> sha256
    std::map<std::string, std::string> outputs;  // file name -> sha256
};

std::filesystem::path manifest_path(const std::filesystem::path& dir, std::string_view stage);
void write_manifest(const std::filesystem::path& dir, const Manifest& m);
std::optional<Manifest> read_manifest(const std::filesystem::path& dir, std::string_view stage);

/// Checks that `files` in `dir` still hash to what `producer` recorded.
/// Throws StaleArtifactError naming the stage to rerun. When `required` is
/// false a missing manifest is accepted (hand-supplied inputs).
void require_fresh(const std::filesystem::path& dir, std::string_view producer,
                   const std::vector<std::string>& files, bool required = true);

/// `synth`: writes the layer files and oracle.json into `out`.
void stage_synth(const SynthSpec& spec, const std::filesystem::path& out, unsigned threads = 1);
/// `ingest`: listings.csv (filtered, assigned) and ego_places.csv.
void stage_ingest(const RunConfig& config);
/// `features`: place_features.csv and its schema.
void stage_features(const RunConfig& config);
/// `egohood`: egohood_features.csv, design.csv, targets.csv.
void stage_egohood(const RunConfig& config);
/// `folds`: folds.csv.
void stage_folds(const RunConfig& config);
/// `train`: <variant>/model_r{0..4}.json, predictions.csv, importance.csv.
void stage_train(const RunConfig& config);
/// `evaluate`: report.txt and metrics.csv over every trained variant. Returns the report.
std::string stage_evaluate(const RunConfig& config);
/// `nowcast`: prices for listings without targets, averaged over the rotation models.
void stage_nowcast(const RunConfig& config, const std::filesystem::path& listings,
                   const std::filesystem::path& output);
/// `explain`: explanation text for one listing with the model whose hold-out
/// contains it (rotation 0 otherwise). Returns the text and writes it to a file.
std::string stage_explain(const RunConfig& config, const std::string& listing_id,
                          std::optional<int> rotation = std::nullopt);

}  // namespace egocast
