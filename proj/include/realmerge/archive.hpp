#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace realmerge {

// Slice roles steer the merge: attention/mlp 2-D tensors get per-layer rank
// truncation, head tensors stay out of task vectors entirely, everything
// else passes through untouched.
enum class Role {
    attention,
    mlp,
    head,
    other,
};

const char * role_name(Role r);
Role role_from_name(const std::string & s);

struct TensorEntry {
    std::vector<size_t> shape;
    Role role = Role::other;
    std::vector<double> data;  // row-major, working precision

    size_t numel() const {
        size_t n = 1;
        for (size_t d : shape) {
            n *= d;
        }
        return n;
    }
};

// Named tensor collection with string metadata. Iteration order is always
// lexicographic by tensor name; the on-disk payload uses the same order.
//
// File layout (storage precision is f32, little-endian):
//   bytes 0..7   u64 length H of the JSON index
//   bytes 8..8+H UTF-8 JSON: tensor name -> {dtype, shape, role, offset},
//                plus an optional "__meta__" string map
//   rest         tensor payloads, name-sorted, byte offsets [begin, end)
//                relative to the payload start
class TensorArchive {
public:
    void set_tensor(const std::string & name, std::vector<size_t> shape, Role role, std::vector<double> data);
    void remove_tensor(const std::string & name);

    bool has(const std::string & name) const { return entries_.count(name) != 0; }
    const TensorEntry & at(const std::string & name) const;
    TensorEntry & at(const std::string & name);

    const std::map<std::string, TensorEntry> & entries() const { return entries_; }
    size_t tensor_count() const { return entries_.size(); }

    std::map<std::string, std::string> & meta() { return meta_; }
    const std::map<std::string, std::string> & meta() const { return meta_; }

    std::string meta_value(const std::string & key, const std::string & fallback = "") const;

private:
    std::map<std::string, TensorEntry> entries_;
    std::map<std::string, std::string> meta_;
};

TensorArchive load_archive(const std::string & path);
void save_archive(const TensorArchive & a, const std::string & path);

// In-memory encode/decode of the same byte layout; save/load are thin
// wrappers over these.
std::vector<unsigned char> encode_archive(const TensorArchive & a);
TensorArchive decode_archive(const std::vector<unsigned char> & bytes);

} // namespace realmerge
