#pragma once

// On-disk formats:
//   features   "DXFT" | u32 version=1 | u32 T | u32 D | T*D f32 LE, frame-major
//              (plain CSV with T rows x D columns accepted for .csv paths)
//   labels     UTF-8, one class name per line
//   mapping    lines "<id> <name>", ids dense from 0
//   checkpoint "DXCK" | u32 version | length-prefixed key=value config block |
//              u32 count | named tensors (u32 name len, name, u32 rank,
//              extents u32 LE, f32 LE payload)
// plus the seeded synthetic dataset generator with its 4 fold manifests.

#include <cstdint>
#include <string>
#include <vector>

#include "dxf/model.hpp"
#include "dxf/tensor.hpp"

namespace dxf::io {

struct ClassMapping {
    std::vector<std::string> names;  // index = class id

    int size() const { return static_cast<int>(names.size()); }
    int id_of(const std::string& name) const;  // -1 if unknown
};

struct SegmentationSample {
    std::string id;
    Tensor<float> features;  // [D x T]
    std::vector<int> labels; // length T
};

Tensor<float> read_feature_file(const std::string& path);
void write_feature_file(const std::string& path, const Tensor<float>& features);

std::vector<int> read_labels(const std::string& path, const ClassMapping& mapping);
void write_labels(const std::string& path, const std::vector<int>& labels, const ClassMapping& mapping);

ClassMapping read_mapping(const std::string& path);
void write_mapping(const std::string& path, const ClassMapping& mapping);

std::vector<std::string> read_split(const std::string& path);
void write_split(const std::string& path, const std::vector<std::string>& ids);

// Loads (features, labels) pairs for the given video ids, validating that
// per-video lengths agree and the feature dimension is consistent.
std::vector<SegmentationSample> load_dataset(const std::string& features_dir,
                                             const std::string& labels_dir,
                                             const ClassMapping& mapping,
                                             const std::vector<std::string>& ids);

struct Checkpoint {
    ModelConfig cfg;
    ParameterSet<float> params;
    bool has_opt = false;
    std::vector<Tensor<float>> adam_m, adam_v;  // parallel to params when has_opt
    long long step = 0;
    int epoch = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

struct SynthSpec {
    int num_videos = 20;
    int num_classes = 4;
    int t_min = 100;
    int t_max = 300;
    double mean_segment = 20.0;   // geometric segment durations
    double sigma_signal = 1.0;    // class centroid scale
    double sigma_noise = 0.25;    // per-frame noise
    int dim = 32;
    std::uint64_t seed = 1;

    void validate() const;
};

struct SynthDataset {
    std::vector<SegmentationSample> samples;
    ClassMapping mapping;
};

SynthDataset synth_make(const SynthSpec& spec);

// Writes features/, labels/, mapping.txt and splits/fold{0..3}.txt under
// out_dir. Fold manifests partition the video ids.
void synth_generate(const SynthSpec& spec, const std::string& out_dir);

}  // namespace dxf::io
