#include "pepnet/checkpoint.hpp"

#include <fstream>
#include <istream>
#include <ostream>

namespace pepnet::ckpt {

namespace {

// Explicit little-endian scalar IO; raw tensor payloads are memcpy'd and the
// build targets little-endian hosts.
template <typename U>
void put(std::ostream& out, U v) {
    unsigned char buf[sizeof(U)];
    for (size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get(std::istream& in) {
    unsigned char buf[sizeof(U)];
    in.read(reinterpret_cast<char*>(buf), sizeof(U));
    if (!in) throw Error("checkpoint truncated");
    U v = 0;
    for (size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

void write_records(std::ostream& out, std::span<const Record> records) {
    out.write(kMagic, 4);
    put<uint32_t>(out, kVersion);
    put<uint64_t>(out, records.size());
    for (const Record& r : records) {
        put<uint32_t>(out, static_cast<uint32_t>(r.name.size()));
        out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        put<uint8_t>(out, static_cast<uint8_t>(r.dtype));
        put<uint32_t>(out, static_cast<uint32_t>(r.shape.size()));
        for (int64_t d : r.shape) put<uint64_t>(out, static_cast<uint64_t>(d));
        out.write(reinterpret_cast<const char*>(r.raw.data()), static_cast<std::streamsize>(r.raw.size()));
    }
    if (!out) throw Error("checkpoint write failed");
}

std::vector<Record> read_records(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw Error("not a checkpoint file (bad magic)");
    const uint32_t version = get<uint32_t>(in);
    if (version != kVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
    const uint64_t count = get<uint64_t>(in);
    std::vector<Record> records;
    records.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        Record r;
        const uint32_t name_len = get<uint32_t>(in);
        r.name.resize(name_len);
        in.read(r.name.data(), name_len);
        r.dtype = static_cast<DType>(get<uint8_t>(in));
        if (r.dtype != DType::f32 && r.dtype != DType::f64) throw Error("unknown dtype tag in checkpoint");
        const uint32_t rank = get<uint32_t>(in);
        int64_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            r.shape.push_back(static_cast<int64_t>(get<uint64_t>(in)));
            numel *= r.shape.back();
        }
        const size_t scalar = r.dtype == DType::f32 ? 4 : 8;
        r.raw.resize(static_cast<size_t>(numel) * scalar);
        in.read(reinterpret_cast<char*>(r.raw.data()), static_cast<std::streamsize>(r.raw.size()));
        if (!in) throw Error("checkpoint truncated in record '" + r.name + "'");
        records.push_back(std::move(r));
    }
    return records;
}

void write_file(const std::string& path, std::span<const Record> records) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path + "' for writing");
    write_records(f, records);
}

std::vector<Record> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path + "'");
    return read_records(f);
}

std::vector<Record> config_records(const ModelConfig& cfg) {
    std::vector<Record> r;
    r.push_back(detail::scalar_record("config/n_points", static_cast<double>(cfg.n_points)));
    r.push_back(detail::vector_record("config/stage_points", cfg.stage_points));
    r.push_back(detail::vector_record("config/stage_dims", cfg.stage_dims));
    r.push_back(detail::scalar_record("config/k_neighbors", static_cast<double>(cfg.k_neighbors)));
    r.push_back(detail::scalar_record("config/lstm_hidden", static_cast<double>(cfg.lstm_hidden)));
    r.push_back(detail::scalar_record("config/regressor_hidden", static_cast<double>(cfg.regressor_hidden)));
    r.push_back(detail::scalar_record("config/aggregation", cfg.aggregation == Aggregation::max_pool ? 0.0 : 1.0));
    double rk = cfg.recurrent == RecurrentKind::none ? 0.0 : (cfg.recurrent == RecurrentKind::vanilla_rnn ? 1.0 : 2.0);
    r.push_back(detail::scalar_record("config/recurrent", rk));
    r.push_back(detail::scalar_record("config/bidirectional", cfg.bidirectional ? 1.0 : 0.0));
    r.push_back(detail::scalar_record("config/alpha", cfg.alpha));
    r.push_back(detail::scalar_record("config/beta", cfg.beta));
    r.push_back(detail::scalar_record("config/lambda", cfg.lambda));
    r.push_back(detail::scalar_record("config/squared_distance_loss", cfg.squared_distance_loss ? 1.0 : 0.0));
    return r;
}

ModelConfig config_from_records(const std::vector<Record>& records) {
    auto find = [&](const std::string& name) -> const Record& {
        for (const Record& r : records)
            if (r.name == name) return r;
        throw Error("checkpoint is missing '" + name + "'");
    };
    auto scalar = [&](const std::string& name) { return record_to_array<double>(find(name))[0]; };
    auto vec = [&](const std::string& name) {
        Array<double> a = record_to_array<double>(find(name));
        std::vector<int64_t> v(static_cast<size_t>(a.numel()));
        for (int64_t i = 0; i < a.numel(); ++i) v[static_cast<size_t>(i)] = static_cast<int64_t>(a[i]);
        return v;
    };
    ModelConfig cfg;
    cfg.n_points = static_cast<int64_t>(scalar("config/n_points"));
    cfg.stage_points = vec("config/stage_points");
    cfg.stage_dims = vec("config/stage_dims");
    cfg.k_neighbors = static_cast<int64_t>(scalar("config/k_neighbors"));
    cfg.lstm_hidden = static_cast<int64_t>(scalar("config/lstm_hidden"));
    cfg.regressor_hidden = static_cast<int64_t>(scalar("config/regressor_hidden"));
    cfg.aggregation = scalar("config/aggregation") == 0.0 ? Aggregation::max_pool : Aggregation::temporal_attention;
    const double rk = scalar("config/recurrent");
    cfg.recurrent = rk == 0.0 ? RecurrentKind::none : (rk == 1.0 ? RecurrentKind::vanilla_rnn : RecurrentKind::lstm);
    cfg.bidirectional = scalar("config/bidirectional") != 0.0;
    cfg.alpha = scalar("config/alpha");
    cfg.beta = scalar("config/beta");
    cfg.lambda = scalar("config/lambda");
    cfg.squared_distance_loss = scalar("config/squared_distance_loss") != 0.0;
    cfg.validate();
    return cfg;
}

}  // namespace pepnet::ckpt
