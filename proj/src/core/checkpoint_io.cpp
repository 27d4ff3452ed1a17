#include "checkpoint_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "error.hpp"

namespace ras {

using nlohmann::json;

json to_json(const ModelConfig& c) {
    return {{"image_h", c.image_h},       {"image_w", c.image_w},     {"channels", c.channels},
            {"patch_size", c.patch_size}, {"hidden_dim", c.hidden_dim}, {"layers", c.layers},
            {"heads", c.heads},           {"mlp_ratio", c.mlp_ratio}, {"num_classes", c.num_classes}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.image_h = j.value("image_h", c.image_h);
    c.image_w = j.value("image_w", c.image_w);
    c.channels = j.value("channels", c.channels);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.num_classes = j.value("num_classes", c.num_classes);
    return c;
}

json to_json(const TrainConfig& c) {
    return {{"steps", c.steps},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_eps", c.adam_eps},
            {"weight_decay", c.weight_decay},
            {"warmup_steps", c.warmup_steps},
            {"ema_decay", c.ema_decay},
            {"seed", c.seed},
            {"data_seed", c.data_seed}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.ema_decay = j.value("ema_decay", c.ema_decay);
    c.seed = j.value("seed", c.seed);
    c.data_seed = j.value("data_seed", c.data_seed);
    return c;
}

namespace {

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf.insert(buf.end(), b, b + n);
    }
    template <class T>
    void le(T v) {
        using U = std::make_unsigned_t<T>;
        U u = static_cast<U>(v);
        for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
    }
    void pad_to(std::size_t align) {
        while (buf.size() % align) buf.push_back(0);
    }
    std::vector<std::uint8_t> buf;
};

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& b) : buf(b) {}
    void need(std::size_t n) const {
        if (pos + n > buf.size()) fail(ErrorKind::Truncated, "checkpoint truncated in header");
    }
    template <class T>
    T le() {
        need(sizeof(T));
        std::make_unsigned_t<T> u = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            u |= static_cast<std::make_unsigned_t<T>>(buf[pos + i]) << (8 * i);
        }
        pos += sizeof(T);
        return static_cast<T>(u);
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
        pos += n;
        return s;
    }
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;
};

struct Entry {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::uint64_t offset = 0;
    std::uint64_t nbytes = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const DitModel& model, const std::string& config_blob) {
    std::string blob = config_blob;
    if (blob.empty()) {
        blob = json{{"model", to_json(model.config())}}.dump(2);
    } else {
        json j;
        try {
            j = json::parse(blob);
        } catch (const json::exception& e) {
            fail(ErrorKind::InvalidArgument, std::string("config blob is not JSON: ") + e.what());
        }
        require(j.contains("model") && model_config_from_json(j["model"]) == model.config(),
                ErrorKind::InvalidArgument, "config blob 'model' does not match the model");
    }

    std::vector<std::pair<std::string, const Matrix*>> tensors;
    model.weights().for_each(
        [&](const std::string& name, const Matrix& m) { tensors.emplace_back(name, &m); });

    // Header size is independent of offsets, so lay it out once to size it.
    auto header = [&](const std::vector<std::uint64_t>& offsets, std::uint64_t total) {
        Writer w;
        w.bytes(kCheckpointMagic, 4);
        w.le<std::uint32_t>(kCheckpointVersion);
        w.le<std::uint32_t>(static_cast<std::uint32_t>(blob.size()));
        w.bytes(blob.data(), blob.size());
        w.le<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            const auto& [name, m] = tensors[i];
            w.le<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
            w.bytes(name.data(), name.size());
            w.le<std::uint8_t>(1);
            w.le<std::uint8_t>(2);
            w.le<std::uint64_t>(m->rows());
            w.le<std::uint64_t>(m->cols());
            w.le<std::uint64_t>(offsets.empty() ? 0 : offsets[i]);
            w.le<std::uint64_t>(m->size() * 4);
        }
        w.le<std::uint64_t>(total);
        return w;
    };
    const std::size_t header_size = header({}, 0).buf.size();
    std::vector<std::uint64_t> offsets;
    std::uint64_t cursor = header_size;
    for (const auto& [name, m] : tensors) {
        cursor = (cursor + kPayloadAlignment - 1) / kPayloadAlignment * kPayloadAlignment;
        offsets.push_back(cursor);
        cursor += m->size() * 4;
    }
    Writer w = header(offsets, cursor);
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        w.pad_to(kPayloadAlignment);
        for (float f : tensors[i].second->flat()) w.le<std::uint32_t>(std::bit_cast<std::uint32_t>(f));
    }
    return std::move(w.buf);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
        fail(ErrorKind::BadMagic, "not a checkpoint (magic != RASF)");
    }
    r.pos = 4;
    const auto version = r.le<std::uint32_t>();
    if (version != kCheckpointVersion) {
        fail(ErrorKind::BadVersion, "unsupported checkpoint version " + std::to_string(version));
    }
    const auto blob_len = r.le<std::uint32_t>();
    Checkpoint ck;
    ck.config_blob = r.str(blob_len);
    const auto count = r.le<std::uint32_t>();
    std::vector<Entry> entries(count);
    for (auto& e : entries) {
        const auto nlen = r.le<std::uint16_t>();
        e.name = r.str(nlen);
        const auto dtype = r.le<std::uint8_t>();
        const auto ndim = r.le<std::uint8_t>();
        if (dtype != 1) fail(ErrorKind::Corrupt, "tensor '" + e.name + "' has unknown dtype");
        if (ndim != 2) fail(ErrorKind::Shape, "tensor '" + e.name + "' is not 2-D");
        for (int i = 0; i < ndim; ++i) e.dims.push_back(r.le<std::uint64_t>());
        e.offset = r.le<std::uint64_t>();
        e.nbytes = r.le<std::uint64_t>();
    }
    const auto total = r.le<std::uint64_t>();
    if (bytes.size() < total) {
        fail(ErrorKind::Truncated, "checkpoint truncated: " + std::to_string(bytes.size()) + " of " +
                                       std::to_string(total) + " bytes present");
    }
    if (bytes.size() > total) fail(ErrorKind::Corrupt, "trailing bytes after checkpoint payload");

    json cfg_json;
    try {
        cfg_json = json::parse(ck.config_blob);
    } catch (const json::exception& e) {
        fail(ErrorKind::Corrupt, std::string("config blob is not JSON: ") + e.what());
    }
    if (!cfg_json.contains("model")) fail(ErrorKind::Corrupt, "config blob lacks a model section");
    const ModelConfig mc = model_config_from_json(cfg_json["model"]);
    try {
        mc.validate();
    } catch (const Error& e) {
        fail(ErrorKind::Shape, e.what());
    }

    std::map<std::string, const Entry*> by_name;
    std::uint64_t prev_end = r.pos;
    for (const auto& e : entries) {
        if (e.offset % kPayloadAlignment) fail(ErrorKind::Corrupt, "tensor '" + e.name + "' misaligned");
        if (e.offset < prev_end) fail(ErrorKind::Corrupt, "tensor '" + e.name + "' overlaps");
        if (e.nbytes != e.dims[0] * e.dims[1] * 4) {
            fail(ErrorKind::Shape, "tensor '" + e.name + "' size disagrees with its shape");
        }
        if (e.offset + e.nbytes > total) fail(ErrorKind::Corrupt, "tensor '" + e.name + "' past end");
        prev_end = e.offset + e.nbytes;
        by_name[e.name] = &e;
    }

    DitWeights w = DitWeights::zeros(mc);
    std::size_t used = 0;
    w.for_each([&](const std::string& name, Matrix& m) {
        auto it = by_name.find(name);
        if (it == by_name.end()) fail(ErrorKind::Shape, "checkpoint lacks tensor '" + name + "'");
        const Entry& e = *it->second;
        if (e.dims[0] != m.rows() || e.dims[1] != m.cols()) {
            fail(ErrorKind::Shape, "tensor '" + name + "' shape does not match the model config");
        }
        const std::uint8_t* p = bytes.data() + e.offset;
        for (std::size_t i = 0; i < m.size(); ++i) {
            const std::uint32_t u = static_cast<std::uint32_t>(p[4 * i]) |
                                    static_cast<std::uint32_t>(p[4 * i + 1]) << 8 |
                                    static_cast<std::uint32_t>(p[4 * i + 2]) << 16 |
                                    static_cast<std::uint32_t>(p[4 * i + 3]) << 24;
            m.data()[i] = std::bit_cast<float>(u);
        }
        ++used;
    });
    if (used != entries.size()) fail(ErrorKind::Shape, "checkpoint has tensors the model does not use");
    ck.model = DitModel(mc, std::move(w));
    return ck;
}

void save_checkpoint(const DitModel& model, const std::string& path, const std::string& config_blob) {
    const auto bytes = encode_checkpoint(model, config_blob);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorKind::Io, "cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) fail(ErrorKind::Io, "write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::Io, "cannot open checkpoint '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace ras
