#pragma once

#include "realmerge/archive.hpp"

#include <string>
#include <vector>

namespace realmerge {

// One entry of the flat parameter layout: where a tensor's elements live
// inside TaskVector::values. Head tensors never appear here.
struct LayoutEntry {
    std::string name;
    std::vector<size_t> shape;
    Role role = Role::other;
    size_t offset = 0;
    size_t numel = 0;
};

// Flat view of (specialist - base) over all non-head tensors, name-sorted.
// All merge arithmetic happens on these.
struct TaskVector {
    std::vector<double> values;
    std::vector<LayoutEntry> layout;
    std::string base_id;
    std::string specialist_id;

    size_t dim() const { return values.size(); }
};

bool same_layout(const TaskVector & a, const TaskVector & b);

TaskVector task_vector(const TensorArchive & specialist, const TensorArchive & base);

// base + u on non-head tensors; head tensors are copied from base unchanged.
TensorArchive apply_update(const TensorArchive & base, const TaskVector & u);

double vnorm(const TaskVector & u);
double vdot(const TaskVector & a, const TaskVector & b);

// a*x + y with matching layouts
TaskVector vaxpy(double a, const TaskVector & x, const TaskVector & y);

TaskVector zeros_like(const TaskVector & u);
TaskVector scaled(const TaskVector & u, double a);

// A 2-D attention/mlp tensor viewed as a rows x cols block of the flat
// vector, row-major at the given offset.
struct LayerSlice {
    std::string name;
    size_t rows = 0;
    size_t cols = 0;
    size_t offset = 0;
};

// Slices cross-checked against archive roles and shapes.
std::vector<LayerSlice> classify_slices(const TaskVector & u, const TensorArchive & a);

// Same selection driven by the roles recorded in the layout itself.
std::vector<LayerSlice> layout_slices(const TaskVector & u);

} // namespace realmerge
