#include "realmerge/task_vector.hpp"

#include "realmerge/errors.hpp"

#include <cmath>

namespace realmerge {

bool same_layout(const TaskVector & a, const TaskVector & b) {
    if (a.values.size() != b.values.size() || a.layout.size() != b.layout.size()) {
        return false;
    }
    for (size_t i = 0; i < a.layout.size(); i++) {
        const LayoutEntry & x = a.layout[i];
        const LayoutEntry & y = b.layout[i];
        if (x.name != y.name || x.shape != y.shape || x.role != y.role || x.offset != y.offset) {
            return false;
        }
    }
    return true;
}

TaskVector task_vector(const TensorArchive & specialist, const TensorArchive & base) {
    if (specialist.tensor_count() != base.tensor_count()) {
        throw Error(errc::layout_mismatch, "specialist and base hold different tensor sets");
    }
    TaskVector tv;
    tv.base_id = base.meta_value("model_id");
    tv.specialist_id = specialist.meta_value("model_id");

    size_t offset = 0;
    for (const auto & [name, be] : base.entries()) {
        if (!specialist.has(name)) {
            throw Error(errc::layout_mismatch, "specialist lacks tensor '" + name + "'");
        }
        const TensorEntry & se = specialist.at(name);
        if (se.shape != be.shape) {
            throw Error(errc::shape_mismatch, "tensor '" + name + "' has different shapes");
        }
        if (se.role != be.role) {
            throw Error(errc::layout_mismatch, "tensor '" + name + "' has different roles");
        }
        if (be.role == Role::head) {
            continue;
        }
        const size_t n = be.numel();
        tv.layout.push_back(LayoutEntry{name, be.shape, be.role, offset, n});
        tv.values.resize(offset + n);
        for (size_t i = 0; i < n; i++) {
            tv.values[offset + i] = se.data[i] - be.data[i];
        }
        offset += n;
    }
    return tv;
}

TensorArchive apply_update(const TensorArchive & base, const TaskVector & u) {
    TensorArchive out = base;
    size_t matched = 0;
    for (const LayoutEntry & le : u.layout) {
        if (!base.has(le.name)) {
            throw Error(errc::layout_mismatch, "base lacks tensor '" + le.name + "'");
        }
        const TensorEntry & be = base.at(le.name);
        if (be.shape != le.shape || be.role != le.role) {
            throw Error(errc::layout_mismatch, "tensor '" + le.name + "' disagrees with the update layout");
        }
        if (be.role == Role::head) {
            throw Error(errc::layout_mismatch, "update layout contains head tensor '" + le.name + "'");
        }
        TensorEntry & oe = out.at(le.name);
        for (size_t i = 0; i < le.numel; i++) {
            oe.data[i] = be.data[i] + u.values[le.offset + i];
        }
        matched++;
    }
    size_t non_head = 0;
    for (const auto & [name, e] : base.entries()) {
        if (e.role != Role::head) {
            non_head++;
        }
    }
    if (matched != non_head) {
        throw Error(errc::layout_mismatch, "update does not cover every non-head tensor of the base");
    }
    return out;
}

double vnorm(const TaskVector & u) {
    double s = 0.0;
    for (double x : u.values) {
        s += x * x;
    }
    return std::sqrt(s);
}

double vdot(const TaskVector & a, const TaskVector & b) {
    if (!same_layout(a, b)) {
        throw Error(errc::layout_mismatch, "vdot: task vectors have different layouts");
    }
    double s = 0.0;
    for (size_t i = 0; i < a.values.size(); i++) {
        s += a.values[i] * b.values[i];
    }
    return s;
}

TaskVector vaxpy(double a, const TaskVector & x, const TaskVector & y) {
    if (!same_layout(x, y)) {
        throw Error(errc::layout_mismatch, "vaxpy: task vectors have different layouts");
    }
    TaskVector out = y;
    for (size_t i = 0; i < out.values.size(); i++) {
        out.values[i] = a * x.values[i] + y.values[i];
    }
    return out;
}

TaskVector zeros_like(const TaskVector & u) {
    TaskVector out = u;
    out.values.assign(u.values.size(), 0.0);
    return out;
}

TaskVector scaled(const TaskVector & u, double a) {
    TaskVector out = u;
    for (double & x : out.values) {
        x *= a;
    }
    return out;
}

std::vector<LayerSlice> classify_slices(const TaskVector & u, const TensorArchive & a) {
    std::vector<LayerSlice> slices;
    for (const LayoutEntry & le : u.layout) {
        if (!a.has(le.name)) {
            throw Error(errc::layout_mismatch, "archive lacks tensor '" + le.name + "'");
        }
        const TensorEntry & e = a.at(le.name);
        if (e.shape != le.shape || e.role != le.role) {
            throw Error(errc::layout_mismatch, "tensor '" + le.name + "' disagrees with the task vector layout");
        }
        if ((e.role == Role::attention || e.role == Role::mlp) && e.shape.size() == 2) {
            slices.push_back(LayerSlice{le.name, le.shape[0], le.shape[1], le.offset});
        }
    }
    return slices;
}

std::vector<LayerSlice> layout_slices(const TaskVector & u) {
    std::vector<LayerSlice> slices;
    for (const LayoutEntry & le : u.layout) {
        if ((le.role == Role::attention || le.role == Role::mlp) && le.shape.size() == 2) {
            slices.push_back(LayerSlice{le.name, le.shape[0], le.shape[1], le.offset});
        }
    }
    return slices;
}

} // namespace realmerge
