#include "squad/tensor_io.hpp"

#include "squad/kv_config.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

namespace squad {

namespace fs = std::filesystem;

PredictionTensor::PredictionTensor(std::size_t learners, std::size_t exits, std::size_t samples,
                                   std::size_t classes)
    : K_(learners), E_(exits), N_(samples), C_(classes), probs_(learners * exits * samples * classes, 0.0f) {}

PredictionTensor::PredictionTensor(std::size_t learners, std::size_t exits, std::size_t samples,
                                   std::size_t classes, std::vector<float> probs)
    : K_(learners), E_(exits), N_(samples), C_(classes), probs_(std::move(probs)) {
    if (probs_.size() != K_ * E_ * N_ * C_)
        throw ValidationError("predictions: payload has " + std::to_string(probs_.size()) +
                              " values, dimensions require " + std::to_string(K_ * E_ * N_ * C_));
}

void PredictionTensor::validate() const {
    if (K_ < 2) throw ValidationError("predictions: K ≥ 2 required (got K=" + std::to_string(K_) + ")");
    if (E_ == 0) throw ValidationError("predictions: E must be positive");
    if (N_ == 0) throw ValidationError("predictions: N must be positive");
    if (C_ < 2) throw ValidationError("predictions: C ≥ 2 required (got C=" + std::to_string(C_) + ")");
    if (probs_.size() != K_ * E_ * N_ * C_) throw ValidationError("predictions: size mismatch");
    for (std::size_t k = 0; k < K_; ++k) {
        for (std::size_t e = 0; e < E_; ++e) {
            for (std::size_t n = 0; n < N_; ++n) {
                double sum = 0.0;
                for (float p : row(k, e, n)) {
                    if (!(p >= 0.0f && p <= 1.0f))
                        throw ValidationError("predictions: probability outside [0,1] at k=" + std::to_string(k) +
                                              " e=" + std::to_string(e) + " n=" + std::to_string(n));
                    sum += p;
                }
                if (std::abs(sum - 1.0) > kRowSumTolerance)
                    throw ValidationError("predictions: row sum " + format_double(sum) + " at k=" +
                                          std::to_string(k) + " e=" + std::to_string(e) +
                                          " n=" + std::to_string(n));
            }
        }
    }
}

void LabelVector::validate(std::size_t samples, std::size_t classes) const {
    if (y.size() != samples)
        throw ValidationError("labels: N mismatch (" + std::to_string(y.size()) + " labels, " +
                              std::to_string(samples) + " samples)");
    for (std::size_t n = 0; n < y.size(); ++n) {
        if (y[n] >= classes)
            throw ValidationError("labels: label out of range at n=" + std::to_string(n) + " (" +
                                  std::to_string(y[n]) + " >= C=" + std::to_string(classes) + ")");
    }
}

CostModel::CostModel(std::size_t learners, std::size_t exits, double fill)
    : K_(learners), E_(exits), costs_(learners * exits, fill) {}

CostModel::CostModel(const std::vector<std::vector<double>>& rows) {
    K_ = rows.size();
    E_ = rows.empty() ? 0 : rows.front().size();
    for (const auto& r : rows) {
        if (r.size() != E_) throw ValidationError("costs: ragged rows (E mismatch)");
        costs_.insert(costs_.end(), r.begin(), r.end());
    }
}

void CostModel::validate(std::size_t learners, std::size_t exits) const {
    if (K_ != learners)
        throw ValidationError("costs: K mismatch (" + std::to_string(K_) + " rows, expected " +
                              std::to_string(learners) + ")");
    if (E_ != exits)
        throw ValidationError("costs: E mismatch (" + std::to_string(E_) + " columns, expected " +
                              std::to_string(exits) + ")");
    for (double c : costs_) {
        if (!(c >= 0.0) || !std::isfinite(c)) throw ValidationError("costs: negative or non-finite MACs");
    }
}

void Bundle::validate() const {
    probs.validate();
    labels.validate(probs.samples(), probs.classes());
    costs.validate(probs.learners(), probs.exits());
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    return v;
}

void write_file(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

std::string read_file(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("missing file: " + path.string());
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::size_t manifest_dim(const KeyValueConfig& m, const std::string& key) {
    long long v = 0;
    try {
        v = m.require_int(key);
    } catch (const std::invalid_argument& e) {
        throw ValidationError(std::string(kManifestFile) + ": " + e.what());
    }
    if (v <= 0) throw ValidationError(std::string(kManifestFile) + ": " + key + " must be positive");
    return static_cast<std::size_t>(v);
}

}  // namespace

void write_bundle(const Bundle& bundle, const fs::path& dir) {
    bundle.validate();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    const auto& t = bundle.probs;
    KeyValueConfig manifest;
    manifest.set("K", t.learners());
    manifest.set("E", t.exits());
    manifest.set("N", t.samples());
    manifest.set("C", t.classes());
    manifest.set("dtype", std::string("f32"));
    manifest.set("endianness", std::string("little"));
    manifest.set("format-version", 1);
    write_file(dir / kManifestFile, manifest.to_string());

    std::string preds;
    preds.reserve(t.data().size() * 4);
    for (float p : t.data()) put_u32(preds, std::bit_cast<std::uint32_t>(p));
    write_file(dir / kPredictionsFile, preds);

    std::string labels;
    labels.reserve(bundle.labels.y.size() * 4);
    for (auto y : bundle.labels.y) put_u32(labels, y);
    write_file(dir / kLabelsFile, labels);

    std::string csv;
    for (std::size_t k = 0; k < bundle.costs.learners(); ++k) {
        for (std::size_t e = 0; e < bundle.costs.exits(); ++e) {
            if (e) csv += ',';
            csv += format_double(bundle.costs.at(k, e));
        }
        csv += '\n';
    }
    write_file(dir / kCostsFile, csv);
}

Bundle read_bundle(const fs::path& dir) {
    KeyValueConfig manifest;
    try {
        manifest = KeyValueConfig::parse(read_file(dir / kManifestFile), (dir / kManifestFile).string());
    } catch (const std::invalid_argument& e) {
        throw ValidationError(e.what());
    }
    if (manifest.get_string("format-version", "") != "1")
        throw ValidationError(std::string(kManifestFile) + ": unsupported format-version");
    if (manifest.get_string("dtype", "") != "f32")
        throw ValidationError(std::string(kManifestFile) + ": dtype must be f32");
    if (manifest.get_string("endianness", "") != "little")
        throw ValidationError(std::string(kManifestFile) + ": endianness must be little");
    const std::size_t K = manifest_dim(manifest, "K");
    const std::size_t E = manifest_dim(manifest, "E");
    const std::size_t N = manifest_dim(manifest, "N");
    const std::size_t C = manifest_dim(manifest, "C");

    const std::string preds = read_file(dir / kPredictionsFile);
    const std::size_t expected = K * E * N * C * 4;
    if (preds.size() != expected)
        throw ValidationError(std::string(kPredictionsFile) + ": size mismatch (" + std::to_string(preds.size()) +
                              " bytes, manifest requires " + std::to_string(expected) + ")");
    std::vector<float> probs(K * E * N * C);
    for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = std::bit_cast<float>(get_u32(preds, 4 * i));

    const std::string labels_raw = read_file(dir / kLabelsFile);
    if (labels_raw.size() != N * 4)
        throw ValidationError(std::string(kLabelsFile) + ": size mismatch (" + std::to_string(labels_raw.size()) +
                              " bytes, manifest requires " + std::to_string(N * 4) + ")");
    LabelVector labels;
    labels.y.resize(N);
    for (std::size_t n = 0; n < N; ++n) labels.y[n] = get_u32(labels_raw, 4 * n);

    std::vector<std::vector<double>> rows;
    std::stringstream csv(read_file(dir / kCostsFile));
    std::string line;
    while (std::getline(csv, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        try {
            rows.push_back(parse_double_list(line, kCostsFile));
        } catch (const std::invalid_argument& e) {
            throw ValidationError(e.what());
        }
    }

    Bundle b{PredictionTensor(K, E, N, C, std::move(probs)), std::move(labels), CostModel(rows)};
    b.validate();
    return b;
}

}  // namespace squad
