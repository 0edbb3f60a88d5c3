#include "ripple/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace ripple::store {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr char kMagic[8] = {'R', 'I', 'P', 'L', '0', '0', '0', '1'};

std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

}  // namespace

std::uint32_t crc32(const void* data, size_t len) {
    static const auto table = make_crc_table();
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint32_t c = 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) c = table[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

void save_checkpoint(const std::string& path, const ad::NamedParams& tensors) {
    std::vector<double> payload;
    ordered_json manifest = ordered_json::array();
    std::int64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        ordered_json entry;
        entry["name"] = name;
        entry["shape"] = t.shape;
        entry["dtype"] = "f64";
        entry["offset"] = offset;
        manifest.push_back(std::move(entry));
        payload.insert(payload.end(), t.data.begin(), t.data.end());
        offset += t.numel() * static_cast<std::int64_t>(sizeof(double));
    }
    const size_t payload_bytes = payload.size() * sizeof(double);

    ordered_json header;
    header["tensors"] = std::move(manifest);
    header["payload_bytes"] = payload_bytes;
    header["payload_crc32"] = crc32(payload.data(), payload_bytes);
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t hlen = static_cast<std::uint32_t>(header_str.size());
    unsigned char lenbuf[4] = {static_cast<unsigned char>(hlen & 0xFF),
                               static_cast<unsigned char>((hlen >> 8) & 0xFF),
                               static_cast<unsigned char>((hlen >> 16) & 0xFF),
                               static_cast<unsigned char>((hlen >> 24) & 0xFF)};
    out.write(reinterpret_cast<const char*>(lenbuf), 4);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload_bytes));
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

ad::NamedParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("not a checkpoint file (bad magic): " + path);
    unsigned char lenbuf[4];
    in.read(reinterpret_cast<char*>(lenbuf), 4);
    if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
    const std::uint32_t hlen = static_cast<std::uint32_t>(lenbuf[0]) |
                               (static_cast<std::uint32_t>(lenbuf[1]) << 8) |
                               (static_cast<std::uint32_t>(lenbuf[2]) << 16) |
                               (static_cast<std::uint32_t>(lenbuf[3]) << 24);
    std::string header_str(hlen, '\0');
    in.read(header_str.data(), hlen);
    if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
    ordered_json header = ordered_json::parse(header_str);

    const size_t payload_bytes = header.at("payload_bytes").get<size_t>();
    std::vector<double> payload(payload_bytes / sizeof(double));
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload_bytes));
    if (!in) throw std::runtime_error("truncated checkpoint payload: " + path);

    const std::uint32_t want_crc = header.at("payload_crc32").get<std::uint32_t>();
    const std::uint32_t got_crc = crc32(payload.data(), payload_bytes);
    if (want_crc != got_crc)
        throw std::runtime_error("checkpoint checksum mismatch: " + path);

    ad::NamedParams out;
    for (const auto& entry : header.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        if (entry.at("dtype").get<std::string>() != "f64")
            throw std::runtime_error("unsupported tensor dtype in checkpoint: " + path);
        ad::Shape shape = entry.at("shape").get<ad::Shape>();
        const std::int64_t off = entry.at("offset").get<std::int64_t>();
        const std::int64_t n = ad::shape_numel(shape);
        if (off % 8 != 0 || off / 8 + n > static_cast<std::int64_t>(payload.size()))
            throw std::runtime_error("tensor '" + name + "' offset out of bounds: " + path);
        ad::Tensor t(std::move(shape));
        std::copy_n(payload.data() + off / 8, n, t.data.data());
        out.emplace(name, std::move(t));
    }
    return out;
}

void save_model(const std::string& path, const models::Model& model) {
    save_checkpoint(path, model.params);
    ordered_json meta;
    if (model.is_mlp()) {
        const auto& c = model.mlp();
        meta["kind"] = "mlp";
        meta["input_dim"] = c.input_dim;
        meta["width"] = c.width;
        meta["depth"] = c.depth;
        meta["heads"] = c.heads;
        meta["activation"] = c.activation == models::Activation::Tanh ? "tanh" : "relu";
    } else {
        const auto& c = model.lm();
        meta["kind"] = "lm";
        meta["vocab_size"] = c.vocab_size;
        meta["d_model"] = c.d_model;
        meta["n_layers"] = c.n_layers;
        meta["n_heads"] = c.n_heads;
        meta["d_ff"] = c.d_ff;
        meta["max_seq_len"] = c.max_seq_len;
        meta["eos_token_id"] = c.eos_token_id;
    }
    std::ofstream out(path + ".meta.json", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write model metadata: " + path + ".meta.json");
    out << meta.dump(2) << "\n";
}

models::Model load_model(const std::string& path) {
    std::ifstream in(path + ".meta.json");
    if (!in) throw std::runtime_error("missing model metadata: " + path + ".meta.json");
    ordered_json meta = ordered_json::parse(in);

    models::Model model;
    if (meta.at("kind") == "mlp") {
        models::MlpConfig c;
        c.input_dim = meta.at("input_dim").get<std::int64_t>();
        c.width = meta.at("width").get<std::int64_t>();
        c.depth = meta.at("depth").get<int>();
        c.heads = meta.at("heads").get<int>();
        c.activation = meta.at("activation") == "tanh" ? models::Activation::Tanh
                                                       : models::Activation::Relu;
        model = models::init_model(c, 0);
    } else {
        models::LmConfig c;
        c.vocab_size = meta.at("vocab_size").get<std::int64_t>();
        c.d_model = meta.at("d_model").get<std::int64_t>();
        c.n_layers = meta.at("n_layers").get<int>();
        c.n_heads = meta.at("n_heads").get<int>();
        c.d_ff = meta.at("d_ff").get<std::int64_t>();
        c.max_seq_len = meta.at("max_seq_len").get<std::int64_t>();
        c.eos_token_id = meta.at("eos_token_id").get<std::int64_t>();
        model = models::init_model(c, 0);
    }

    ad::NamedParams weights = load_checkpoint(path);
    if (weights.size() != model.params.size())
        throw std::runtime_error("checkpoint tensor set does not match model config: " + path);
    for (auto& [name, t] : model.params) {
        auto it = weights.find(name);
        if (it == weights.end())
            throw std::runtime_error("checkpoint is missing tensor '" + name + "': " + path);
        if (it->second.shape != t.shape)
            throw std::runtime_error("checkpoint tensor '" + name + "' has wrong shape: " + path);
        t.data = std::move(it->second.data);
    }
    return model;
}

}  // namespace ripple::store
