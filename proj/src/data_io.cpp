#include "dxf/data_io.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;

namespace dxf::io {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

struct Reader {
    std::string bytes;
    size_t pos = 0;
    std::string path;

    void need(size_t n, const char* what) const {
        if (pos + n > bytes.size())
            throw IoError(path + ": truncated " + what + " at byte offset " + std::to_string(pos) +
                          " (need " + std::to_string(n) + " bytes, have " +
                          std::to_string(bytes.size() - pos) + ")");
    }

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + static_cast<size_t>(i)])) << (8 * i);
        pos += 4;
        return v;
    }

    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

    std::string raw(size_t n, const char* what) {
        need(n, what);
        std::string s = bytes.substr(pos, n);
        pos += n;
        return s;
    }
};

Reader read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return Reader{os.str(), 0, path};
}

void write_file_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path);
}

Tensor<float> read_feature_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::vector<float>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<float> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stof(cell));
            } catch (const std::exception&) {
                throw DataError(path + ":" + std::to_string(lineno) + ": bad numeric value '" + cell + "'");
            }
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw DataError(path + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(rows.front().size()) + " columns, got " + std::to_string(row.size()));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError(path + ": empty feature CSV");
    const int T = static_cast<int>(rows.size());
    const int D = static_cast<int>(rows.front().size());
    Tensor<float> t = Tensor<float>::zeros({D, T});
    for (int f = 0; f < T; ++f)
        for (int d = 0; d < D; ++d) t.at(d, f) = rows[static_cast<size_t>(f)][static_cast<size_t>(d)];
    return t;
}

}  // namespace

int ClassMapping::id_of(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    return -1;
}

Tensor<float> read_feature_file(const std::string& path) {
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0) return read_feature_csv(path);
    Reader r = read_file_bytes(path);
    if (r.raw(4, "magic") != "DXFT") throw IoError(path + ": bad magic, expected DXFT");
    std::uint32_t version = r.u32("version");
    if (version != 1) throw IoError(path + ": unsupported feature file version " + std::to_string(version));
    const std::uint32_t T = r.u32("frame count");
    const std::uint32_t D = r.u32("feature dim");
    if (T == 0 || D == 0) throw DataError(path + ": zero extent in header (T=" + std::to_string(T) + ", D=" + std::to_string(D) + ")");
    const size_t expected = static_cast<size_t>(T) * D * 4;
    if (r.bytes.size() - r.pos != expected)
        throw IoError(path + ": payload length mismatch, expected " + std::to_string(expected) +
                      " bytes, got " + std::to_string(r.bytes.size() - r.pos));
    Tensor<float> t = Tensor<float>::zeros({static_cast<int>(D), static_cast<int>(T)});
    for (std::uint32_t f = 0; f < T; ++f)
        for (std::uint32_t d = 0; d < D; ++d)
            t.at(static_cast<int>(d), static_cast<int>(f)) = r.f32("payload");
    return t;
}

void write_feature_file(const std::string& path, const Tensor<float>& features) {
    if (features.rank() != 2) throw ShapeError("write_feature_file: features must be [D x T]");
    const int D = features.shape[0], T = features.shape[1];
    std::string out;
    out += "DXFT";
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(T));
    put_u32(out, static_cast<std::uint32_t>(D));
    for (int f = 0; f < T; ++f)
        for (int d = 0; d < D; ++d) put_f32(out, features.at(d, f));
    write_file_bytes(path, out);
}

std::vector<int> read_labels(const std::string& path, const ClassMapping& mapping) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<int> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() && in.peek() == EOF) break;  // tolerate trailing newline
        int id = mapping.id_of(line);
        if (id < 0) throw DataError(path + ": unknown label name '" + line + "' at line " + std::to_string(lineno));
        out.push_back(id);
    }
    return out;
}

void write_labels(const std::string& path, const std::vector<int>& labels, const ClassMapping& mapping) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    for (int l : labels) {
        if (l < 0 || l >= mapping.size()) throw DataError("label id " + std::to_string(l) + " outside mapping");
        out << mapping.names[static_cast<size_t>(l)] << "\n";
    }
}

ClassMapping read_mapping(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    ClassMapping m;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto sp = line.find(' ');
        if (sp == std::string::npos) throw DataError(path + ": malformed mapping line " + std::to_string(lineno));
        int id;
        try {
            id = std::stoi(line.substr(0, sp));
        } catch (const std::exception&) {
            throw DataError(path + ": bad class id at line " + std::to_string(lineno));
        }
        if (id != static_cast<int>(m.names.size()))
            throw DataError(path + ": class ids must be dense from 0, got " + std::to_string(id) +
                            " at line " + std::to_string(lineno));
        std::string name = line.substr(sp + 1);
        if (m.id_of(name) >= 0) throw DataError(path + ": duplicate class name '" + name + "'");
        m.names.push_back(std::move(name));
    }
    return m;
}

void write_mapping(const std::string& path, const ClassMapping& mapping) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    for (size_t i = 0; i < mapping.names.size(); ++i) out << i << " " << mapping.names[i] << "\n";
}

std::vector<std::string> read_split(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) ids.push_back(line);
    }
    return ids;
}

void write_split(const std::string& path, const std::vector<std::string>& ids) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& id : ids) out << id << "\n";
}

std::vector<SegmentationSample> load_dataset(const std::string& features_dir,
                                             const std::string& labels_dir,
                                             const ClassMapping& mapping,
                                             const std::vector<std::string>& ids) {
    std::vector<SegmentationSample> out;
    std::vector<std::string> offenders;
    int D = -1;
    for (const auto& id : ids) {
        SegmentationSample s;
        s.id = id;
        s.features = read_feature_file((fs::path(features_dir) / (id + ".dxft")).string());
        s.labels = read_labels((fs::path(labels_dir) / (id + ".txt")).string(), mapping);
        if (static_cast<int>(s.labels.size()) != s.features.shape[1]) {
            offenders.push_back(id + " (features T=" + std::to_string(s.features.shape[1]) +
                                ", labels T=" + std::to_string(s.labels.size()) + ")");
            continue;
        }
        if (D < 0) D = s.features.shape[0];
        if (s.features.shape[0] != D) {
            offenders.push_back(id + " (D=" + std::to_string(s.features.shape[0]) + ", expected " +
                                std::to_string(D) + ")");
            continue;
        }
        out.push_back(std::move(s));
    }
    if (!offenders.empty()) {
        std::string msg = "inconsistent dataset entries:";
        for (const auto& o : offenders) msg += " " + o;
        throw DataError(msg);
    }
    return out;
}

namespace {

std::string config_block(const Checkpoint& ck) {
    std::ostringstream os;
    os << "input_dim=" << ck.cfg.input_dim << "\n";
    os << "model_dim=" << ck.cfg.model_dim << "\n";
    os << "num_classes=" << ck.cfg.num_classes << "\n";
    os << "blocks_per_stage=" << ck.cfg.blocks_per_stage << "\n";
    os << "num_decoders=" << ck.cfg.num_decoders << "\n";
    os << "cross_qv_mode=" << (ck.cfg.cross_qv_mode ? 1 : 0) << "\n";
    os << "use_cross_connections=" << (ck.cfg.use_cross_connections ? 1 : 0) << "\n";
    os << "seed=" << ck.cfg.seed << "\n";
    os << "step=" << ck.step << "\n";
    os << "epoch=" << ck.epoch << "\n";
    os << "has_opt=" << (ck.has_opt ? 1 : 0) << "\n";
    return os.str();
}

void put_tensor(std::string& out, const std::string& name, const Tensor<float>& t) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int e : t.shape) put_u32(out, static_cast<std::uint32_t>(e));
    for (float v : t.data) put_f32(out, v);
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    ck.cfg.validate();
    std::string out;
    out += "DXCK";
    put_u32(out, 1);
    std::string cfg = config_block(ck);
    put_u32(out, static_cast<std::uint32_t>(cfg.size()));
    out += cfg;
    std::uint32_t count = static_cast<std::uint32_t>(ck.params.values.size()) * (ck.has_opt ? 3u : 1u);
    put_u32(out, count);
    for (size_t i = 0; i < ck.params.values.size(); ++i)
        put_tensor(out, ck.params.names[i], ck.params.values[i]);
    if (ck.has_opt) {
        if (ck.adam_m.size() != ck.params.values.size() || ck.adam_v.size() != ck.params.values.size())
            throw IoError("checkpoint: optimizer buffers do not match parameter list");
        for (size_t i = 0; i < ck.params.values.size(); ++i) put_tensor(out, "opt.m." + ck.params.names[i], ck.adam_m[i]);
        for (size_t i = 0; i < ck.params.values.size(); ++i) put_tensor(out, "opt.v." + ck.params.names[i], ck.adam_v[i]);
    }
    write_file_bytes(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
    Reader r = read_file_bytes(path);
    if (r.raw(4, "magic") != "DXCK") throw IoError(path + ": bad magic, expected DXCK");
    std::uint32_t version = r.u32("version");
    if (version != 1) throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
    std::uint32_t cfg_len = r.u32("config length");
    std::string cfg_text = r.raw(cfg_len, "config block");

    Checkpoint ck;
    std::istringstream cs(cfg_text);
    std::string line;
    while (std::getline(cs, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        try {
            if (key == "input_dim") ck.cfg.input_dim = std::stoi(val);
            else if (key == "model_dim") ck.cfg.model_dim = std::stoi(val);
            else if (key == "num_classes") ck.cfg.num_classes = std::stoi(val);
            else if (key == "blocks_per_stage") ck.cfg.blocks_per_stage = std::stoi(val);
            else if (key == "num_decoders") ck.cfg.num_decoders = std::stoi(val);
            else if (key == "cross_qv_mode") ck.cfg.cross_qv_mode = std::stoi(val) != 0;
            else if (key == "use_cross_connections") ck.cfg.use_cross_connections = std::stoi(val) != 0;
            else if (key == "seed") ck.cfg.seed = std::stoull(val);
            else if (key == "step") ck.step = std::stoll(val);
            else if (key == "epoch") ck.epoch = std::stoi(val);
            else if (key == "has_opt") ck.has_opt = std::stoi(val) != 0;
            else throw IoError(path + ": unknown checkpoint config key '" + key + "'");
        } catch (const IoError&) {
            throw;
        } catch (const std::exception&) {
            throw IoError(path + ": bad value for checkpoint config key '" + key + "'");
        }
    }
    ck.cfg.validate();

    auto layout = param_layout(ck.cfg);
    std::uint32_t count = r.u32("tensor count");
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t nlen = r.u32("tensor name length");
        std::string name = r.raw(nlen, "tensor name");
        std::uint32_t rank = r.u32("tensor rank");
        std::vector<int> shape;
        std::int64_t numel = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            std::uint32_t e = r.u32("tensor extent");
            shape.push_back(static_cast<int>(e));
            numel *= e;
        }
        std::vector<float> data(static_cast<size_t>(numel));
        for (auto& v : data) v = r.f32("tensor payload");
        tensors.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(data)));
    }
    if (r.pos != r.bytes.size())
        throw IoError(path + ": " + std::to_string(r.bytes.size() - r.pos) + " trailing bytes after tensor table");

    auto take = [&](const std::string& name, const std::vector<int>& shape) {
        for (auto& [n, t] : tensors)
            if (n == name) {
                if (t.shape != shape)
                    throw IoError(path + ": tensor '" + name + "' has shape " + shape_str(t.shape) +
                                  ", config requires " + shape_str(shape));
                return std::move(t);
            }
        throw IoError(path + ": missing tensor '" + name + "'");
    };

    for (const auto& def : layout) {
        ck.params.index[def.name] = static_cast<int>(ck.params.values.size());
        ck.params.names.push_back(def.name);
        ck.params.values.push_back(take(def.name, def.shape));
    }
    if (ck.has_opt)
        for (const auto& def : layout) {
            ck.adam_m.push_back(take("opt.m." + def.name, def.shape));
            ck.adam_v.push_back(take("opt.v." + def.name, def.shape));
        }
    return ck;
}

void SynthSpec::validate() const {
    if (num_videos < 1 || num_classes < 2 || dim < 1) throw ConfigError("synth: num_videos, classes, dim must be positive");
    if (t_min < 1 || t_max < t_min) throw ConfigError("synth: bad frame count range");
    if (mean_segment < 1.0) throw ConfigError("synth: mean_segment must be >= 1");
    if (sigma_signal < 0 || sigma_noise < 0) throw ConfigError("synth: sigmas must be >= 0");
}

namespace {

// Hand-rolled samplers keep the byte-identical-dataset contract
// independent of the standard library's distribution internals.
double unit_open(std::mt19937_64& rng) {
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

double gaussian(std::mt19937_64& rng) {
    double u1 = unit_open(rng), u2 = unit_open(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

int geometric_duration(std::mt19937_64& rng, double mean) {
    if (mean <= 1.0) return 1;
    const double p = 1.0 / mean;
    double u = unit_open(rng);
    return 1 + static_cast<int>(std::floor(std::log(u) / std::log(1.0 - p)));
}

}  // namespace

SynthDataset synth_make(const SynthSpec& spec) {
    spec.validate();
    SynthDataset ds;
    for (int c = 0; c < spec.num_classes; ++c) ds.mapping.names.push_back("action_" + std::to_string(c));

    std::mt19937_64 rng(spec.seed);
    std::vector<std::vector<double>> centroids(static_cast<size_t>(spec.num_classes),
                                               std::vector<double>(static_cast<size_t>(spec.dim)));
    for (auto& cen : centroids)
        for (auto& v : cen) v = spec.sigma_signal * gaussian(rng);

    for (int vi = 0; vi < spec.num_videos; ++vi) {
        const int T = spec.t_min + static_cast<int>(rng() % static_cast<std::uint64_t>(spec.t_max - spec.t_min + 1));
        std::vector<int> labels;
        int prev = -1;
        while (static_cast<int>(labels.size()) < T) {
            int cls;
            if (prev < 0) {
                cls = static_cast<int>(rng() % static_cast<std::uint64_t>(spec.num_classes));
            } else {
                cls = static_cast<int>(rng() % static_cast<std::uint64_t>(spec.num_classes - 1));
                if (cls >= prev) ++cls;  // no immediate repeats
            }
            int dur = geometric_duration(rng, spec.mean_segment);
            for (int t = 0; t < dur && static_cast<int>(labels.size()) < T; ++t) labels.push_back(cls);
            prev = cls;
        }
        Tensor<float> feat = Tensor<float>::zeros({spec.dim, T});
        for (int t = 0; t < T; ++t) {
            const auto& cen = centroids[static_cast<size_t>(labels[static_cast<size_t>(t)])];
            for (int d = 0; d < spec.dim; ++d)
                feat.at(d, t) = static_cast<float>(cen[static_cast<size_t>(d)] + spec.sigma_noise * gaussian(rng));
        }
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "video_%03d", vi);
        ds.samples.push_back({idbuf, std::move(feat), std::move(labels)});
    }
    return ds;
}

void synth_generate(const SynthSpec& spec, const std::string& out_dir) {
    SynthDataset ds = synth_make(spec);
    fs::create_directories(fs::path(out_dir) / "features");
    fs::create_directories(fs::path(out_dir) / "labels");
    fs::create_directories(fs::path(out_dir) / "splits");
    write_mapping((fs::path(out_dir) / "mapping.txt").string(), ds.mapping);
    std::vector<std::vector<std::string>> folds(4);
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& s = ds.samples[i];
        write_feature_file((fs::path(out_dir) / "features" / (s.id + ".dxft")).string(), s.features);
        write_labels((fs::path(out_dir) / "labels" / (s.id + ".txt")).string(), s.labels, ds.mapping);
        folds[i % 4].push_back(s.id);
    }
    for (int k = 0; k < 4; ++k)
        write_split((fs::path(out_dir) / "splits" / ("fold" + std::to_string(k) + ".txt")).string(), folds[static_cast<size_t>(k)]);
}

}  // namespace dxf::io
