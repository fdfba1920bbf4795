// Small shared utilities: 3-vector, error types, dense-vector helpers, timers.
#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace afem {

// Error hierarchy. The CLI maps these to process exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MeshError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct SolverError : Error {
    using Error::Error;
};
struct BudgetError : Error {
    using Error::Error;
};

// Always-on precondition check (never compiled out).
#define AFEM_REQUIRE(cond, msg)                                                  \
    do {                                                                         \
        if (!(cond)) throw ::afem::Error(std::string("requirement failed: ") +   \
                                         (msg) + " [" + #cond + "]");            \
    } while (0)

struct Vec3 {
    double x = 0, y = 0, z = 0;

    double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline double dist_sq(const Vec3& a, const Vec3& b) { return dot(a - b, a - b); }

// Dense-vector helpers used by the solvers.
inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}
inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

class StopWatch {
  public:
    StopWatch() : start_(clock::now()) {}
    double ms() const {
        return std::chrono::duration<double, std::milli>(clock::now() - start_).count();
    }

  private:
    using clock = std::chrono::steady_clock;
    clock::time_point start_;
};

}  // namespace afem
