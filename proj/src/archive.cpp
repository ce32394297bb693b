#include "realmerge/archive.hpp"

#include "realmerge/errors.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little, "archive i/o assumes a little-endian host");

namespace realmerge {

using json = nlohmann::json;

const char * role_name(Role r) {
    switch (r) {
        case Role::attention:
            return "attention";
        case Role::mlp:
            return "mlp";
        case Role::head:
            return "head";
        case Role::other:
            return "other";
    }
    return "other";
}

Role role_from_name(const std::string & s) {
    if (s == "attention") {
        return Role::attention;
    }
    if (s == "mlp") {
        return Role::mlp;
    }
    if (s == "head") {
        return Role::head;
    }
    if (s == "other") {
        return Role::other;
    }
    throw Error(errc::malformed_header, "unknown tensor role '" + s + "'");
}

void TensorArchive::set_tensor(const std::string & name, std::vector<size_t> shape, Role role,
                               std::vector<double> data) {
    if (name.empty() || name == "__meta__") {
        throw Error(errc::bad_argument, "invalid tensor name");
    }
    if (shape.empty()) {
        throw Error(errc::bad_argument, "tensor shape must be nonempty");
    }
    size_t n = 1;
    for (size_t d : shape) {
        if (d == 0) {
            throw Error(errc::bad_argument, "tensor dimensions must be positive");
        }
        n *= d;
    }
    if (data.size() != n) {
        throw Error(errc::shape_mismatch, "tensor '" + name + "' data does not match shape");
    }
    entries_[name] = TensorEntry{std::move(shape), role, std::move(data)};
}

void TensorArchive::remove_tensor(const std::string & name) {
    entries_.erase(name);
}

const TensorEntry & TensorArchive::at(const std::string & name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw Error(errc::bad_argument, "no tensor named '" + name + "'");
    }
    return it->second;
}

TensorEntry & TensorArchive::at(const std::string & name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw Error(errc::bad_argument, "no tensor named '" + name + "'");
    }
    return it->second;
}

std::string TensorArchive::meta_value(const std::string & key, const std::string & fallback) const {
    auto it = meta_.find(key);
    return it == meta_.end() ? fallback : it->second;
}

namespace {

// SAX walker that only watches for repeated keys inside one object level.
// nlohmann's DOM parser silently keeps the last duplicate, which would turn
// a corrupt index into silent data loss.
struct dup_key_sax {
    std::vector<std::map<std::string, int>> stack;
    std::string duplicate;

    bool null() { return true; }
    bool boolean(bool) { return true; }
    bool number_integer(json::number_integer_t) { return true; }
    bool number_unsigned(json::number_unsigned_t) { return true; }
    bool number_float(json::number_float_t, const std::string &) { return true; }
    bool string(std::string &) { return true; }
    bool binary(json::binary_t &) { return true; }
    bool start_object(size_t) {
        stack.emplace_back();
        return true;
    }
    bool key(std::string & k) {
        if (!stack.empty() && ++stack.back()[k] > 1) {
            duplicate = k;
            return false;
        }
        return true;
    }
    bool end_object() {
        stack.pop_back();
        return true;
    }
    bool start_array(size_t) { return true; }
    bool end_array() { return true; }
    bool parse_error(size_t, const std::string &, const nlohmann::detail::exception &) { return false; }
};

uint64_t read_u64_le(const unsigned char * p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; i--) {
        v = (v << 8) | p[i];
    }
    return v;
}

void write_u64_le(std::vector<unsigned char> & out, uint64_t v) {
    for (int i = 0; i < 8; i++) {
        out.push_back((unsigned char) (v & 0xff));
        v >>= 8;
    }
}

} // namespace

std::vector<unsigned char> encode_archive(const TensorArchive & a) {
    json index = json::object();
    size_t offset = 0;
    for (const auto & [name, e] : a.entries()) {
        const size_t bytes = e.numel() * 4;
        index[name] = {
            {"dtype", "f32"},
            {"shape", e.shape},
            {"role", role_name(e.role)},
            {"offset", {offset, offset + bytes}},
        };
        offset += bytes;
    }
    if (!a.meta().empty()) {
        index["__meta__"] = a.meta();
    }
    const std::string header = index.dump();

    std::vector<unsigned char> out;
    out.reserve(8 + header.size() + offset);
    write_u64_le(out, header.size());
    out.insert(out.end(), header.begin(), header.end());

    for (const auto & [name, e] : a.entries()) {
        for (double x : e.data) {
            if (!std::isfinite(x)) {
                throw Error(errc::non_finite_value, "tensor '" + name + "' holds a non-finite value");
            }
            const float f = (float) x;
            if (!std::isfinite(f)) {
                throw Error(errc::non_finite_value, "tensor '" + name + "' overflows f32 storage");
            }
            unsigned char buf[4];
            std::memcpy(buf, &f, 4);
            out.insert(out.end(), buf, buf + 4);
        }
    }
    return out;
}

TensorArchive decode_archive(const std::vector<unsigned char> & bytes) {
    if (bytes.size() < 8) {
        throw Error(errc::malformed_header, "file shorter than the 8-byte length prefix");
    }
    const uint64_t hlen = read_u64_le(bytes.data());
    if (hlen > bytes.size() - 8) {
        throw Error(errc::malformed_header, "declared header length exceeds file size");
    }
    const char * htext = (const char *) bytes.data() + 8;

    {
        dup_key_sax sax;
        bool ok = json::sax_parse(htext, htext + hlen, &sax);
        if (!sax.duplicate.empty()) {
            throw Error(errc::duplicate_name, "index key '" + sax.duplicate + "' appears twice");
        }
        if (!ok) {
            throw Error(errc::malformed_header, "index is not valid JSON");
        }
    }

    json index;
    try {
        index = json::parse(htext, htext + hlen);
    } catch (const json::exception & e) {
        throw Error(errc::malformed_header, std::string("index is not valid JSON: ") + e.what());
    }
    if (!index.is_object()) {
        throw Error(errc::malformed_header, "index must be a JSON object");
    }

    const size_t payload_size = bytes.size() - 8 - hlen;
    const unsigned char * payload = bytes.data() + 8 + hlen;

    TensorArchive a;
    size_t expected_offset = 0;
    for (const auto & [name, desc] : index.items()) {
        if (name == "__meta__") {
            if (!desc.is_object()) {
                throw Error(errc::malformed_header, "__meta__ must be an object");
            }
            for (const auto & [k, v] : desc.items()) {
                if (!v.is_string()) {
                    throw Error(errc::malformed_header, "__meta__ values must be strings");
                }
                a.meta()[k] = v.get<std::string>();
            }
            continue;
        }
        if (!desc.is_object() || !desc.contains("dtype") || !desc.contains("shape") || !desc.contains("role") ||
            !desc.contains("offset")) {
            throw Error(errc::malformed_header, "tensor '" + name + "' entry is incomplete");
        }
        if (desc["dtype"] != "f32") {
            throw Error(errc::malformed_header, "tensor '" + name + "' has unsupported dtype");
        }
        std::vector<size_t> shape;
        for (const auto & d : desc["shape"]) {
            if (!d.is_number_unsigned() || d.get<uint64_t>() == 0) {
                throw Error(errc::malformed_header, "tensor '" + name + "' has a non-positive dimension");
            }
            shape.push_back(d.get<size_t>());
        }
        if (shape.empty()) {
            throw Error(errc::malformed_header, "tensor '" + name + "' has an empty shape");
        }
        const Role role = role_from_name(desc["role"].get<std::string>());
        const auto & off = desc["offset"];
        if (!off.is_array() || off.size() != 2 || !off[0].is_number_unsigned() || !off[1].is_number_unsigned()) {
            throw Error(errc::malformed_header, "tensor '" + name + "' has a malformed offset");
        }
        const uint64_t begin = off[0].get<uint64_t>();
        const uint64_t end = off[1].get<uint64_t>();

        size_t numel = 1;
        for (size_t d : shape) {
            numel *= d;
        }
        if (begin != expected_offset || end < begin || end - begin != numel * 4) {
            throw Error(errc::malformed_header, "tensor '" + name + "' offsets disagree with its shape");
        }
        if (end > payload_size) {
            throw Error(errc::truncated_payload, "tensor '" + name + "' extends past the end of the file");
        }
        expected_offset = end;

        std::vector<double> data(numel);
        for (size_t i = 0; i < numel; i++) {
            float f;
            std::memcpy(&f, payload + begin + i * 4, 4);
            if (!std::isfinite(f)) {
                throw Error(errc::non_finite_value, "tensor '" + name + "' holds a non-finite value");
            }
            data[i] = (double) f;
        }
        a.set_tensor(name, std::move(shape), role, std::move(data));
    }
    if (expected_offset != payload_size) {
        throw Error(errc::malformed_header, "payload size disagrees with the index");
    }
    return a;
}

TensorArchive load_archive(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(errc::io_error, "cannot open '" + path + "' for reading");
    }
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) {
        throw Error(errc::io_error, "read failure on '" + path + "'");
    }
    return decode_archive(bytes);
}

void save_archive(const TensorArchive & a, const std::string & path) {
    const std::vector<unsigned char> bytes = encode_archive(a);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(errc::io_error, "cannot open '" + path + "' for writing");
    }
    out.write((const char *) bytes.data(), (std::streamsize) bytes.size());
    if (!out) {
        throw Error(errc::io_error, "write failure on '" + path + "'");
    }
}

} // namespace realmerge
