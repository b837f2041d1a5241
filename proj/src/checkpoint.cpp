#include "roct/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace roct {

namespace {

constexpr char kMagic[8] = {'R', 'O', 'C', 'T', 'C', 'K', 'P', 'T'};

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    write_u32(os, static_cast<std::uint32_t>(v));
    write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

void write_str(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t read_u64(std::istream& is) {
    const std::uint64_t lo = read_u32(is);
    const std::uint64_t hi = read_u32(is);
    return lo | (hi << 32);
}

std::string read_str(std::istream& is) {
    const std::uint32_t len = read_u32(is);
    if (len > (1u << 24)) throw std::runtime_error("checkpoint: implausible string length");
    std::string s(len, '\0');
    is.read(s.data(), static_cast<std::streamsize>(len));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return s;
}

struct FileParam {
    std::vector<int> shape;
    std::vector<double> data;
};

struct FileContents {
    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, FileParam>> params;
};

FileContents read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) {
        throw std::runtime_error("checkpoint: '" + path + "' is not a checkpoint file");
    }
    const std::uint32_t version = read_u32(is);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
    }

    FileContents fc;
    const std::uint32_t meta_count = read_u32(is);
    for (std::uint32_t i = 0; i < meta_count; ++i) {
        std::string k = read_str(is);
        std::string v = read_str(is);
        fc.meta[k] = v;
    }
    const std::uint32_t param_count = read_u32(is);
    for (std::uint32_t i = 0; i < param_count; ++i) {
        std::string name = read_str(is);
        FileParam p;
        const std::uint32_t rank = read_u32(is);
        if (rank > 16) throw std::runtime_error("checkpoint: implausible rank");
        std::int64_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            p.shape.push_back(static_cast<int>(read_u32(is)));
            numel *= p.shape.back();
        }
        p.data.resize(static_cast<std::size_t>(numel));
        for (auto& x : p.data) x = std::bit_cast<double>(read_u64(is));
        fc.params.emplace_back(std::move(name), std::move(p));
    }
    return fc;
}

std::map<std::string, std::string> model_metadata(const ModelGraph& m) {
    std::map<std::string, std::string> meta;
    auto put_int = [&](const std::string& k, long long v) { meta[k] = std::to_string(v); };
    auto put_spec = [&](const std::string& p, const BackboneSpec& s) {
        meta[p + ".family"] = family_name(s.family);
        put_int(p + ".stem_channels", s.stem_channels);
        put_int(p + ".block_count", s.block_count);
        put_int(p + ".final_channels", s.final_channels);
        put_int(p + ".downsample", s.downsample_factor);
    };
    put_int("class_count", m.class_count);
    put_int("input_size", m.input_size);
    put_spec("backbone_a", m.spec_a);
    meta["backbone_b.present"] = m.spec_b ? "1" : "0";
    if (m.spec_b) put_spec("backbone_b", *m.spec_b);
    put_int("head.out_capsules", m.head.out_capsules);
    put_int("head.out_dim", m.head.out_dim);
    put_int("head.routing_iters", m.head.routing_iters);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", m.head.dropout_rate);
    meta["head.dropout"] = buf;
    meta["head.compressor"] = m.head.compressor == HeadConfig::Compressor::Srnet ? "srnet" : "gap";
    return meta;
}

}  // namespace

void save_checkpoint(const ModelGraph& m, const std::string& path,
                     const std::map<std::string, std::string>& extra_meta) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot write '" + path + "'");
    os.write(kMagic, 8);
    write_u32(os, kCheckpointVersion);

    std::map<std::string, std::string> meta = model_metadata(m);
    for (const auto& [k, v] : extra_meta) meta[k] = v;
    write_u32(os, static_cast<std::uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
        write_str(os, k);
        write_str(os, v);
    }

    const auto& params = m.params.all();
    write_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        write_str(os, p->name);
        const auto& shape = p->value.shape();
        write_u32(os, static_cast<std::uint32_t>(shape.size()));
        for (int d : shape) write_u32(os, static_cast<std::uint32_t>(d));
        for (double x : p->value.data()) write_u64(os, std::bit_cast<std::uint64_t>(x));
    }
    if (!os) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

LoadReport load_checkpoint(const std::string& path, ModelGraph& m, bool strict) {
    FileContents fc = read_file(path);
    LoadReport report;

    std::map<std::string, const FileParam*> by_name;
    for (const auto& [name, p] : fc.params) by_name[name] = &p;

    for (const auto& p : m.params.all()) {
        auto it = by_name.find(p->name);
        if (it == by_name.end()) {
            report.only_in_model.push_back(p->name);
            continue;
        }
        if (it->second->shape != p->value.shape()) {
            report.skipped_shape.push_back(p->name);
        } else {
            p->value.data_mut() = it->second->data;
            report.copied.push_back(p->name);
        }
        by_name.erase(it);
    }
    for (const auto& [name, unused] : by_name) {
        (void)unused;
        report.only_in_file.push_back(name);
    }

    if (strict && !report.clean()) {
        std::string what = "checkpoint: strict load of '" + path + "' failed:";
        for (const auto& n : report.skipped_shape) what += " shape-conflict:" + n;
        for (const auto& n : report.only_in_file) what += " only-in-file:" + n;
        for (const auto& n : report.only_in_model) what += " only-in-model:" + n;
        throw std::runtime_error(what);
    }
    return report;
}

std::map<std::string, std::string> read_checkpoint_metadata(const std::string& path) {
    return read_file(path).meta;
}

ModelGraph model_from_metadata(const std::map<std::string, std::string>& meta, std::uint64_t seed) {
    auto get = [&](const std::string& k) -> const std::string& {
        auto it = meta.find(k);
        if (it == meta.end()) throw std::runtime_error("checkpoint: metadata missing key '" + k + "'");
        return it->second;
    };
    auto get_int = [&](const std::string& k) { return std::stoi(get(k)); };
    auto get_spec = [&](const std::string& p) {
        BackboneSpec s;
        s.family = parse_family(get(p + ".family"));
        s.stem_channels = get_int(p + ".stem_channels");
        s.block_count = get_int(p + ".block_count");
        s.final_channels = get_int(p + ".final_channels");
        s.downsample_factor = get_int(p + ".downsample");
        return s;
    };

    BackboneSpec a = get_spec("backbone_a");
    std::optional<BackboneSpec> b;
    if (get("backbone_b.present") == "1") b = get_spec("backbone_b");
    HeadConfig head;
    head.out_capsules = get_int("head.out_capsules");
    head.out_dim = get_int("head.out_dim");
    head.routing_iters = get_int("head.routing_iters");
    head.dropout_rate = std::stod(get("head.dropout"));
    head.compressor =
        get("head.compressor") == "gap" ? HeadConfig::Compressor::Gap : HeadConfig::Compressor::Srnet;
    return build_ensemble(a, b, head, get_int("class_count"), get_int("input_size"), seed);
}

}  // namespace roct
