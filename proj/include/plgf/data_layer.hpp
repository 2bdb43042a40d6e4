#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "plgf/context_embedding.hpp"
#include "plgf/flow_core.hpp"

namespace plgf {

/// One (coarse, fine, factors) triple at a 30-minute interval index.
struct Sample {
    FlowMap coarse;
    FlowMap fine;
    ExternalFactors factors;
    std::int64_t timestamp = 0;

    bool operator==(const Sample&) const = default;
};

enum class Split { train, val, test };
inline constexpr std::array<Split, 3> kAllSplits = {Split::train, Split::val, Split::test};
const char* to_string(Split s);
Split parse_split(const std::string& name);

/// Chronological 7:1:2: train = floor(0.7 n), val = floor(0.1 n), test gets the rest.
struct SplitSizes {
    std::int64_t train = 0;
    std::int64_t val = 0;
    std::int64_t test = 0;

    static SplitSizes for_count(std::int64_t n);
    std::int64_t total() const { return train + val + test; }
    std::int64_t operator[](Split s) const;
    bool operator==(const SplitSizes&) const = default;
};

/// Location of one split's records. Offsets are in bytes from file start.
struct SplitFiles {
    std::string coarse_file;
    std::string fine_file;
    std::string factors_file;
    std::int64_t coarse_offset = 0;
    std::int64_t fine_offset = 0;
    std::int64_t factors_offset = 0;
    std::int64_t first_timestamp = 0;
    std::int64_t last_timestamp = 0;

    bool operator==(const SplitFiles&) const = default;
};

/// Bytes per factor record: i64 timestamp, i32 weather, f32 temperature,
/// f32 wind, i32 day, i32 hour, u8 holiday, u8 weekend, 2 pad bytes.
inline constexpr std::int64_t kFactorRecordBytes = 32;
inline constexpr int kDatasetFormatVersion = 1;

struct DatasetManifest {
    int format_version = kDatasetFormatVersion;
    std::string source = "synthetic";
    std::uint64_t seed = 0;
    std::int64_t upscale_factor = 4;
    std::int64_t channels = 1;
    std::int64_t coarse_height = 0;
    std::int64_t coarse_width = 0;
    std::int64_t fine_height = 0;
    std::int64_t fine_width = 0;
    SplitSizes sizes;
    std::array<SplitFiles, 3> files;

    GridRelation relation() const { return GridRelation(upscale_factor, coarse_height, coarse_width); }
    std::int64_t coarse_bytes_per_sample() const { return 4 * channels * coarse_height * coarse_width; }
    std::int64_t fine_bytes_per_sample() const { return 4 * channels * fine_height * fine_width; }
    const SplitFiles& split_files(Split s) const { return files[static_cast<std::size_t>(s)]; }

    bool operator==(const DatasetManifest&) const = default;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

struct SampleRejection {
    Split split = Split::train;
    std::int64_t index = 0;
    std::int64_t timestamp = 0;
    double relative_error = 0.0;
};

struct LoadOptions {
    /// |aggregate(fine) - coarse| <= tol * max(1, |coarse|) per coarse cell.
    double conservation_tolerance = 1e-3;
    /// Drop violating samples into Dataset::rejected instead of failing.
    bool drop_invalid = false;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> test;
    std::vector<SampleRejection> rejected;

    const std::vector<Sample>& split(Split s) const;
    std::vector<Sample>& split(Split s);
};

DatasetManifest read_manifest(const std::filesystem::path& dir);

/// Reads and validates a dataset directory. Throws LoadError on a malformed
/// manifest, truncated files, a relation mismatch, out-of-order timestamps or
/// (unless drop_invalid) conservation violations, listing offending indices.
Dataset load_dataset(const std::filesystem::path& dir, const GridRelation& relation, const LoadOptions& options = {});

/// Writes chronologically ordered samples, splitting 7:1:2.
DatasetManifest write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples,
                              const GridRelation& relation, const std::string& source, std::uint64_t seed);

/// Largest conservation violation of one sample, relative per coarse cell.
double ingestion_error(const Sample& s, const GridRelation& relation);

/// Long-tail generator shape. Widths are fractions of the fine grid width.
struct SkewParams {
    int hotspots = 4;
    double hotspot_peak = 200.0;
    double hotspot_sigma_min = 0.03;
    double hotspot_sigma_max = 0.07;
    double amplitude_jitter = 0.2;
    double floor_median = 0.5;
    double floor_sigma = 0.5;
    std::int64_t channels = 1;
    std::int64_t start_timestamp = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const SkewParams& s);
void from_json(const nlohmann::json& j, SkewParams& s);

/// Deterministic per seed: fixed hot spots with time-varying amplitude over
/// a lognormal floor; coarse = aggregate(fine).
std::vector<Sample> synthesize_samples(std::uint64_t seed, std::int64_t count, const GridRelation& relation,
                                       const SkewParams& skew = {});

DatasetManifest generate_synthetic(const std::filesystem::path& dir, std::uint64_t seed, std::int64_t count,
                                   const GridRelation& relation, const SkewParams& skew = {});

}  // namespace plgf
