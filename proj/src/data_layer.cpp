#include "plgf/data_layer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "plgf/binary_io.hpp"

namespace plgf {

namespace fs = std::filesystem;

const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw ConfigError("unknown split '" + name + "' (expected train|val|test)");
}

SplitSizes SplitSizes::for_count(std::int64_t n) {
    if (n < 0) throw InputError("sample count must be >= 0");
    SplitSizes s;
    // Integer arithmetic keeps floor(0.7 n) exact.
    s.train = n * 7 / 10;
    s.val = n / 10;
    s.test = n - s.train - s.val;
    return s;
}

std::int64_t SplitSizes::operator[](Split s) const {
    switch (s) {
        case Split::train: return train;
        case Split::val: return val;
        case Split::test: return test;
    }
    return 0;
}

const std::vector<Sample>& Dataset::split(Split s) const {
    return s == Split::train ? train : s == Split::val ? val : test;
}

std::vector<Sample>& Dataset::split(Split s) { return s == Split::train ? train : s == Split::val ? val : test; }

void to_json(nlohmann::json& j, const DatasetManifest& m) {
    nlohmann::json splits = nlohmann::json::object();
    for (auto s : kAllSplits) {
        const auto& f = m.split_files(s);
        splits[to_string(s)] = {{"count", m.sizes[s]},
                                {"coarse_file", f.coarse_file},
                                {"coarse_offset", f.coarse_offset},
                                {"fine_file", f.fine_file},
                                {"fine_offset", f.fine_offset},
                                {"factors_file", f.factors_file},
                                {"factors_offset", f.factors_offset},
                                {"first_timestamp", f.first_timestamp},
                                {"last_timestamp", f.last_timestamp}};
    }
    j = {{"format", "plgf-dataset"},
         {"format_version", m.format_version},
         {"source", m.source},
         {"seed", m.seed},
         {"upscale_factor", m.upscale_factor},
         {"channels", m.channels},
         {"coarse_shape", {m.coarse_height, m.coarse_width}},
         {"fine_shape", {m.fine_height, m.fine_width}},
         {"dtype", "float32-le"},
         {"layout", "sample, channel, row, column"},
         {"interval_minutes", 30},
         {"coarse_bytes_per_sample", m.coarse_bytes_per_sample()},
         {"fine_bytes_per_sample", m.fine_bytes_per_sample()},
         {"factor_record_bytes", kFactorRecordBytes},
         {"cardinalities",
          {{"weather", ExternalFactors::kWeatherClasses},
           {"day_of_week", ExternalFactors::kDaysOfWeek},
           {"hour_of_day", ExternalFactors::kHoursOfDay},
           {"holiday", 2},
           {"weekend", 2}}},
         {"total_count", m.sizes.total()},
         {"splits", splits}};
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
    if (j.at("format").get<std::string>() != "plgf-dataset") throw LoadError("manifest format tag is not plgf-dataset");
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kDatasetFormatVersion)
        throw LoadError("unsupported dataset format_version " + std::to_string(m.format_version));
    m.source = j.at("source").get<std::string>();
    if (m.source != "synthetic" && m.source != "taxibj") throw LoadError("unknown dataset source '" + m.source + "'");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.upscale_factor = j.at("upscale_factor").get<std::int64_t>();
    m.channels = j.at("channels").get<std::int64_t>();
    const auto coarse = j.at("coarse_shape").get<std::vector<std::int64_t>>();
    const auto fine = j.at("fine_shape").get<std::vector<std::int64_t>>();
    if (coarse.size() != 2 || fine.size() != 2) throw LoadError("coarse_shape and fine_shape must have two entries");
    m.coarse_height = coarse[0];
    m.coarse_width = coarse[1];
    m.fine_height = fine[0];
    m.fine_width = fine[1];
    if (m.channels < 1 || m.coarse_height < 1 || m.coarse_width < 1) throw LoadError("manifest shapes must be positive");
    if (m.fine_height != m.coarse_height * m.upscale_factor || m.fine_width != m.coarse_width * m.upscale_factor)
        throw LoadError("fine_shape is not coarse_shape * upscale_factor");
    if (j.at("factor_record_bytes").get<std::int64_t>() != kFactorRecordBytes)
        throw LoadError("factor_record_bytes must be " + std::to_string(kFactorRecordBytes));
    const auto& splits = j.at("splits");
    for (auto s : kAllSplits) {
        const auto& sj = splits.at(to_string(s));
        auto& f = m.files[static_cast<std::size_t>(s)];
        const auto count = sj.at("count").get<std::int64_t>();
        if (count < 0) throw LoadError(std::string("negative count for split ") + to_string(s));
        (s == Split::train ? m.sizes.train : s == Split::val ? m.sizes.val : m.sizes.test) = count;
        f.coarse_file = sj.at("coarse_file").get<std::string>();
        f.fine_file = sj.at("fine_file").get<std::string>();
        f.factors_file = sj.at("factors_file").get<std::string>();
        f.coarse_offset = sj.at("coarse_offset").get<std::int64_t>();
        f.fine_offset = sj.at("fine_offset").get<std::int64_t>();
        f.factors_offset = sj.at("factors_offset").get<std::int64_t>();
        f.first_timestamp = sj.at("first_timestamp").get<std::int64_t>();
        f.last_timestamp = sj.at("last_timestamp").get<std::int64_t>();
    }
    if (j.contains("total_count") && j.at("total_count").get<std::int64_t>() != m.sizes.total())
        throw LoadError("total_count disagrees with the split counts");
    if (!(m.sizes == SplitSizes::for_count(m.sizes.total())))
        throw LoadError("split counts do not follow the 7:1:2 rule for " + std::to_string(m.sizes.total()) + " samples");
}

DatasetManifest read_manifest(const fs::path& dir) {
    const auto path = dir / "manifest.json";
    if (!fs::is_directory(dir)) throw LoadError("dataset directory " + dir.string() + " does not exist");
    std::ifstream in(path);
    if (!in) throw LoadError("no manifest.json in " + dir.string());
    try {
        return nlohmann::json::parse(in).get<DatasetManifest>();
    } catch (const nlohmann::json::exception& e) {
        throw LoadError("malformed manifest " + path.string() + ": " + e.what());
    }
}

namespace {

void write_factor_record(std::ostream& out, const Sample& s) {
    io::write_i64(out, s.timestamp);
    io::write_i32(out, s.factors.weather_class);
    io::write_f32(out, static_cast<float>(s.factors.temperature_c));
    io::write_f32(out, static_cast<float>(s.factors.wind_mph));
    io::write_i32(out, s.factors.day_of_week);
    io::write_i32(out, s.factors.hour_of_day);
    const char flags[4] = {static_cast<char>(s.factors.is_holiday), static_cast<char>(s.factors.is_weekend), 0, 0};
    out.write(flags, sizeof(flags));
}

std::pair<std::int64_t, ExternalFactors> read_factor_record(std::istream& in) {
    std::pair<std::int64_t, ExternalFactors> r;
    r.first = io::read_i64(in);
    auto& f = r.second;
    f.weather_class = io::read_i32(in);
    f.temperature_c = io::read_f32(in);
    f.wind_mph = io::read_f32(in);
    f.day_of_week = io::read_i32(in);
    f.hour_of_day = io::read_i32(in);
    char flags[4];
    in.read(flags, sizeof(flags));
    if (!in) throw LoadError("truncated factor record");
    if ((flags[0] != 0 && flags[0] != 1) || (flags[1] != 0 && flags[1] != 1))
        throw LoadError("holiday/weekend flags must be 0 or 1");
    f.is_holiday = flags[0] == 1;
    f.is_weekend = flags[1] == 1;
    return r;
}

std::ifstream open_at(const fs::path& path, std::int64_t offset, std::int64_t bytes_needed) {
    std::error_code ec;
    const auto size = fs::file_size(path, ec);
    if (ec) throw LoadError("missing data file " + path.string());
    if (static_cast<std::int64_t>(size) < offset + bytes_needed)
        throw LoadError(path.string() + " holds " + std::to_string(size) + " bytes, expected at least " +
                        std::to_string(offset + bytes_needed));
    std::ifstream in(path, std::ios::binary);
    in.seekg(offset);
    return in;
}

std::string list_indices(const std::vector<SampleRejection>& rejected) {
    std::ostringstream os;
    const std::size_t shown = std::min<std::size_t>(rejected.size(), 20);
    for (std::size_t i = 0; i < shown; ++i) {
        const auto& r = rejected[i];
        os << (i ? ", " : "") << to_string(r.split) << "[" << r.index << "] (t=" << r.timestamp
           << ", rel err " << r.relative_error << ")";
    }
    if (rejected.size() > shown) os << ", ... " << rejected.size() - shown << " more";
    return os.str();
}

}  // namespace

double ingestion_error(const Sample& s, const GridRelation& relation) {
    const FlowMap agg = aggregate(s.fine, relation);
    if (!agg.same_shape(s.coarse)) throw LoadError("coarse map does not match the aggregated fine map shape");
    const Eigen::ArrayXd a = agg.values().cast<double>();
    const Eigen::ArrayXd c = s.coarse.values().cast<double>();
    return ((a - c).abs() / c.abs().max(1.0)).maxCoeff();
}

Dataset load_dataset(const fs::path& dir, const GridRelation& relation, const LoadOptions& options) {
    Dataset ds;
    ds.manifest = read_manifest(dir);
    const auto& m = ds.manifest;
    if (m.upscale_factor != relation.upscale_factor() || std::pair{m.coarse_height, m.coarse_width} != relation.coarse_shape())
        throw LoadError("dataset geometry " + std::to_string(m.coarse_height) + "x" + std::to_string(m.coarse_width) +
                        " N=" + std::to_string(m.upscale_factor) + " does not match the requested relation " +
                        std::to_string(relation.coarse_shape().first) + "x" +
                        std::to_string(relation.coarse_shape().second) + " N=" + std::to_string(relation.upscale_factor()));

    const auto coarse_n = m.channels * m.coarse_height * m.coarse_width;
    const auto fine_n = m.channels * m.fine_height * m.fine_width;
    std::int64_t previous = std::numeric_limits<std::int64_t>::min();
    for (auto split : kAllSplits) {
        const auto& f = m.split_files(split);
        const auto count = m.sizes[split];
        auto& out = ds.split(split);
        out.reserve(static_cast<std::size_t>(count));
        if (count == 0) continue;
        auto coarse_in = open_at(dir / f.coarse_file, f.coarse_offset, count * m.coarse_bytes_per_sample());
        auto fine_in = open_at(dir / f.fine_file, f.fine_offset, count * m.fine_bytes_per_sample());
        auto factors_in = open_at(dir / f.factors_file, f.factors_offset, count * kFactorRecordBytes);
        for (std::int64_t i = 0; i < count; ++i) {
            Sample s;
            Eigen::ArrayXf coarse(coarse_n), fine(fine_n);
            io::read_f32_array(coarse_in, coarse.data(), coarse_n);
            io::read_f32_array(fine_in, fine.data(), fine_n);
            auto [ts, factors] = read_factor_record(factors_in);
            const auto where = std::string(to_string(split)) + "[" + std::to_string(i) + "]";
            try {
                s.coarse = FlowMap(m.coarse_height, m.coarse_width, std::move(coarse), m.channels);
                s.fine = FlowMap(m.fine_height, m.fine_width, std::move(fine), m.channels);
                factors.validate();
            } catch (const InputError& e) {
                throw LoadError("sample " + where + ": " + e.what());
            }
            s.factors = factors;
            s.timestamp = ts;
            if (ts <= previous) throw LoadError("sample " + where + " breaks chronological order (t=" + std::to_string(ts) + ")");
            previous = ts;
            if (i == 0 && ts != f.first_timestamp) throw LoadError("first_timestamp mismatch in split " + std::string(to_string(split)));
            if (i == count - 1 && ts != f.last_timestamp) throw LoadError("last_timestamp mismatch in split " + std::string(to_string(split)));
            const double err = ingestion_error(s, relation);
            if (!(err <= options.conservation_tolerance)) {
                ds.rejected.push_back({split, i, ts, err});
                continue;
            }
            out.push_back(std::move(s));
        }
    }
    if (!ds.rejected.empty() && !options.drop_invalid)
        throw LoadError("conservation violated beyond tolerance " + std::to_string(options.conservation_tolerance) +
                        " in " + std::to_string(ds.rejected.size()) + " samples: " + list_indices(ds.rejected));
    return ds;
}

DatasetManifest write_dataset(const fs::path& dir, const std::vector<Sample>& samples, const GridRelation& relation,
                              const std::string& source, std::uint64_t seed) {
    DatasetManifest m;
    m.source = source;
    m.seed = seed;
    m.upscale_factor = relation.upscale_factor();
    std::tie(m.coarse_height, m.coarse_width) = relation.coarse_shape();
    std::tie(m.fine_height, m.fine_width) = relation.fine_shape();
    m.channels = samples.empty() ? 1 : samples.front().coarse.channels();
    m.sizes = SplitSizes::for_count(static_cast<std::int64_t>(samples.size()));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (!relation.matches_coarse(s.coarse) || !relation.matches_fine(s.fine) || s.coarse.channels() != m.channels ||
            s.fine.channels() != m.channels)
            throw InputError("sample " + std::to_string(i) + " does not match the dataset geometry");
        if (i > 0 && s.timestamp <= samples[i - 1].timestamp)
            throw InputError("samples must be in strictly increasing timestamp order");
    }

    fs::create_directories(dir);
    std::size_t cursor = 0;
    for (auto split : kAllSplits) {
        auto& f = m.files[static_cast<std::size_t>(split)];
        const std::string stem = to_string(split);
        f.coarse_file = stem + "_coarse.f32";
        f.fine_file = stem + "_fine.f32";
        f.factors_file = stem + "_factors.bin";
        std::ofstream coarse(dir / f.coarse_file, std::ios::binary | std::ios::trunc);
        std::ofstream fine(dir / f.fine_file, std::ios::binary | std::ios::trunc);
        std::ofstream factors(dir / f.factors_file, std::ios::binary | std::ios::trunc);
        const auto count = m.sizes[split];
        for (std::int64_t i = 0; i < count; ++i, ++cursor) {
            const auto& s = samples[cursor];
            io::write_f32_array(coarse, s.coarse.values().data(), s.coarse.size());
            io::write_f32_array(fine, s.fine.values().data(), s.fine.size());
            write_factor_record(factors, s);
            if (i == 0) f.first_timestamp = s.timestamp;
            f.last_timestamp = s.timestamp;
        }
        if (!coarse || !fine || !factors) throw LoadError("failed writing split files in " + dir.string());
    }
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << nlohmann::json(m).dump(2) << '\n';
    if (!out) throw LoadError("failed writing manifest in " + dir.string());
    return m;
}

void SkewParams::validate() const {
    if (hotspots < 0) throw ConfigError("skew.hotspots must be >= 0");
    if (!(hotspot_peak > 0.0)) throw ConfigError("skew.hotspot_peak must be > 0");
    if (!(hotspot_sigma_min > 0.0) || hotspot_sigma_max < hotspot_sigma_min)
        throw ConfigError("skew hotspot sigma range must satisfy 0 < min <= max");
    if (amplitude_jitter < 0.0 || floor_sigma < 0.0) throw ConfigError("skew jitter and floor_sigma must be >= 0");
    if (!(floor_median > 0.0)) throw ConfigError("skew.floor_median must be > 0");
    if (channels < 1) throw ConfigError("skew.channels must be >= 1");
}

void to_json(nlohmann::json& j, const SkewParams& s) {
    j = {{"hotspots", s.hotspots},
         {"hotspot_peak", s.hotspot_peak},
         {"hotspot_sigma_min", s.hotspot_sigma_min},
         {"hotspot_sigma_max", s.hotspot_sigma_max},
         {"amplitude_jitter", s.amplitude_jitter},
         {"floor_median", s.floor_median},
         {"floor_sigma", s.floor_sigma},
         {"channels", s.channels},
         {"start_timestamp", s.start_timestamp}};
}

void from_json(const nlohmann::json& j, SkewParams& s) {
    try {
        for (const auto& [key, _] : j.items()) {
            if (!nlohmann::json(SkewParams{}).contains(key)) throw ConfigError("unknown key '" + key + "' in skew params");
        }
        if (j.contains("hotspots")) s.hotspots = j.at("hotspots").get<int>();
        if (j.contains("hotspot_peak")) s.hotspot_peak = j.at("hotspot_peak").get<double>();
        if (j.contains("hotspot_sigma_min")) s.hotspot_sigma_min = j.at("hotspot_sigma_min").get<double>();
        if (j.contains("hotspot_sigma_max")) s.hotspot_sigma_max = j.at("hotspot_sigma_max").get<double>();
        if (j.contains("amplitude_jitter")) s.amplitude_jitter = j.at("amplitude_jitter").get<double>();
        if (j.contains("floor_median")) s.floor_median = j.at("floor_median").get<double>();
        if (j.contains("floor_sigma")) s.floor_sigma = j.at("floor_sigma").get<double>();
        if (j.contains("channels")) s.channels = j.at("channels").get<std::int64_t>();
        if (j.contains("start_timestamp")) s.start_timestamp = j.at("start_timestamp").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad skew params: ") + e.what());
    }
    s.validate();
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double bump(double x, double center, double width) { return std::exp(-0.5 * (x - center) * (x - center) / (width * width)); }

/// Commuter-style daily curve in [0.15, ~1]: morning peak near 8:30 or an
/// evening peak near 18:00.
double daily_profile(double hour, bool morning) {
    return 0.15 + (morning ? 0.85 * bump(hour, 8.5, 1.8) + 0.35 * bump(hour, 18.0, 2.5)
                           : 0.35 * bump(hour, 8.5, 2.0) + 0.85 * bump(hour, 18.5, 2.2));
}

struct Hotspot {
    double ci, cj, sigma, amplitude;
    bool morning;
};

}  // namespace

std::vector<Sample> synthesize_samples(std::uint64_t seed, std::int64_t count, const GridRelation& relation,
                                       const SkewParams& skew) {
    if (count < 1) throw InputError("synthetic count must be >= 1");
    skew.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const auto [fh, fw] = relation.fine_shape();
    const auto channels = skew.channels;

    // Fixed per-dataset geography: hot spot sites and a smooth floor field.
    std::vector<std::vector<Hotspot>> spots(static_cast<std::size_t>(channels));
    Eigen::ArrayXXd floor_field = Eigen::ArrayXXd::Constant(fh, fw, 0.0);
    for (auto& per_channel : spots) {
        for (int k = 0; k < skew.hotspots; ++k) {
            Hotspot h;
            h.ci = unit(rng) * static_cast<double>(fh);
            h.cj = unit(rng) * static_cast<double>(fw);
            h.sigma = (skew.hotspot_sigma_min + unit(rng) * (skew.hotspot_sigma_max - skew.hotspot_sigma_min)) *
                      static_cast<double>(fw);
            h.amplitude = skew.hotspot_peak * (0.5 + 0.5 * unit(rng));
            h.morning = k % 2 == 0;
            per_channel.push_back(h);
        }
    }
    for (int k = 0; k < 3; ++k) {
        const double ci = unit(rng) * fh, cj = unit(rng) * fw, w = (0.15 + 0.2 * unit(rng)) * fw;
        const double amp = 0.5 + unit(rng);
        for (Eigen::Index i = 0; i < fh; ++i)
            for (Eigen::Index j = 0; j < fw; ++j) floor_field(i, j) += amp * bump(std::hypot(i + 0.5 - ci, j + 0.5 - cj), 0.0, w);
    }
    floor_field = skew.floor_median * (floor_field - floor_field.mean()).exp();

    // Holidays: about one day in thirty, fixed per dataset.
    const std::int64_t first_day = skew.start_timestamp / 48;
    const std::int64_t last_day = (skew.start_timestamp + count - 1) / 48;
    std::vector<bool> holiday(static_cast<std::size_t>(last_day - first_day + 1));
    for (std::size_t d = 0; d < holiday.size(); ++d) holiday[d] = unit(rng) < 1.0 / 30.0;

    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(count));
    int weather = 0;
    for (std::int64_t n = 0; n < count; ++n) {
        const std::int64_t t = skew.start_timestamp + n;
        const std::int64_t day = t / 48;
        const double hour = static_cast<double>(t % 48) / 2.0;
        ExternalFactors f;
        f.hour_of_day = static_cast<int>(t % 48) / 2;
        f.day_of_week = static_cast<int>(((day % 7) + 7) % 7);
        f.is_weekend = f.day_of_week >= 5;
        f.is_holiday = holiday[static_cast<std::size_t>(day - first_day)];
        if (n == 0 || unit(rng) < 0.1) weather = static_cast<int>(unit(rng) * ExternalFactors::kWeatherClasses) % ExternalFactors::kWeatherClasses;
        f.weather_class = weather;
        const double season = std::sin(kTwoPi * static_cast<double>(day) / 365.0);
        const double temp = 12.0 + 14.0 * season + 5.0 * std::sin(kTwoPi * (hour - 9.0) / 24.0) + 1.5 * gauss(rng);
        // Stored as float on disk, so keep only float-representable values.
        f.temperature_c = static_cast<float>(std::clamp(temp, ExternalFactors::kTemperatureMin, ExternalFactors::kTemperatureMax));
        f.wind_mph = static_cast<float>(std::clamp(std::abs(8.0 + 5.0 * gauss(rng)), ExternalFactors::kWindMin, ExternalFactors::kWindMax));

        double activity = 1.0;
        if (f.is_weekend) activity *= 0.75;
        if (f.is_holiday) activity *= 0.7;
        if (f.weather_class >= 10) activity *= 0.85;

        Eigen::ArrayXf values(channels * fh * fw);
        for (Eigen::Index c = 0; c < channels; ++c) {
            std::vector<double> amp;
            for (const auto& h : spots[static_cast<std::size_t>(c)])
                amp.push_back(h.amplitude * activity * daily_profile(hour, h.morning) *
                              std::exp(skew.amplitude_jitter * gauss(rng)));
            const double floor_scale = activity * (0.4 + 0.6 * daily_profile(hour, true));
            for (Eigen::Index i = 0; i < fh; ++i)
                for (Eigen::Index j = 0; j < fw; ++j) {
                    double v = floor_field(i, j) * floor_scale * std::exp(skew.floor_sigma * gauss(rng));
                    const auto& hs = spots[static_cast<std::size_t>(c)];
                    for (std::size_t k = 0; k < hs.size(); ++k)
                        v += amp[k] * bump(std::hypot(i + 0.5 - hs[k].ci, j + 0.5 - hs[k].cj), 0.0, hs[k].sigma);
                    values[(c * fh + i) * fw + j] = static_cast<float>(v);
                }
        }
        Sample s;
        s.fine = FlowMap(fh, fw, std::move(values), channels);
        s.coarse = aggregate(s.fine, relation);
        s.factors = f;
        s.timestamp = t;
        out.push_back(std::move(s));
    }
    return out;
}

DatasetManifest generate_synthetic(const fs::path& dir, std::uint64_t seed, std::int64_t count,
                                   const GridRelation& relation, const SkewParams& skew) {
    return write_dataset(dir, synthesize_samples(seed, count, relation, skew), relation, "synthetic", seed);
}

}  // namespace plgf
