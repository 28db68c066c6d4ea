// Runtime for stitched harnesses: fuzzable parameters, bailout and the
// extrinsic typestate stores.
#ifndef STITCH_FUZZ_RUNTIME_H
#define STITCH_FUZZ_RUNTIME_H

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <fcntl.h>
#include <sys/mman.h>
#include <unistd.h>

namespace fuzz_rt {

enum Kind : uint8_t { KIND_FIXED = 0, KIND_STR = 1, KIND_FILE = 2 };

struct Param {
  uint8_t kind;
  std::string bytes;
};

struct Value {
  enum Tag { INT, STR, PTR } tag;
  int64_t i;
  std::string s;
  const void *p;
};

struct State {
  int status_fd = 1;
  size_t instance = 0;
  const std::vector<Param> *params = nullptr;
  size_t next_param = 0;
  std::vector<std::unique_ptr<max_align_t[]>> fixed;
  std::map<const void *, std::map<std::string, Value>> objects;
  std::map<std::string, Value> globals;
};

inline State &state() {
  static State s;
  return s;
}

inline void status(const std::string &line) {
  const char *p = line.data();
  size_t n = line.size();
  while (n > 0) {
    ssize_t w = ::write(state().status_fd, p, n);
    if (w <= 0) return;
    p += w;
    n -= static_cast<size_t>(w);
  }
}

[[noreturn]] inline void bail() {
  status("BAIL " + std::to_string(state().instance) + "\n");
  ::_exit(0);
}

// Hands out the next parameter, recording the requested shape.
inline std::string take(uint8_t kind, size_t width) {
  State &s = state();
  size_t idx = s.next_param++;
  status("P " + std::to_string(s.instance) + " " + std::to_string(kind) + " " +
         std::to_string(width) + "\n");
  std::string out;
  if (s.params && idx < s.params->size()) out = (*s.params)[idx].bytes;
  if (kind == KIND_FIXED) out.resize(width, '\0');
  return out;
}

inline void *param_fixed(size_t width) {
  std::string bytes = take(KIND_FIXED, width);
  size_t words = width / sizeof(max_align_t) + 1;
  state().fixed.emplace_back(new max_align_t[words]());
  void *p = state().fixed.back().get();
  if (width) std::memcpy(p, bytes.data(), width);
  return p;
}

inline std::map<std::string, Value> &attrs(const void *o) { return state().objects[o]; }

inline const Value &get(std::map<std::string, Value> &m, const char *k, Value::Tag tag) {
  auto it = m.find(k);
  if (it == m.end() || it->second.tag != tag) bail();
  return it->second;
}

inline void set_int(std::map<std::string, Value> &m, const char *k, int64_t v) {
  m[k] = Value{Value::INT, v, std::string(), nullptr};
}
inline void set_str(std::map<std::string, Value> &m, const char *k, const std::string &v) {
  m[k] = Value{Value::STR, 0, v, nullptr};
}
inline void set_ptr(std::map<std::string, Value> &m, const char *k, const void *v) {
  m[k] = Value{Value::PTR, 0, std::string(), v};
}

// Shared edge map, byte counters.
static const size_t COVERAGE_SIZE = 1u << 16;

}  // namespace fuzz_rt

// Edge callbacks for -fsanitize-coverage=trace-pc-guard. The header must be
// included by exactly one translation unit.
static uint8_t *fuzz_rt_coverage_map = nullptr;

#if defined(__clang__)
#define FUZZ_RT_NO_COVERAGE __attribute__((no_sanitize("coverage")))
#else
#define FUZZ_RT_NO_COVERAGE
#endif

extern "C" FUZZ_RT_NO_COVERAGE void __sanitizer_cov_trace_pc_guard_init(uint32_t *start,
                                                                        uint32_t *stop) {
  static uint32_t n = 0;
  if (start == stop || *start) return;
  for (uint32_t *g = start; g < stop; g++) *g = ++n;
}

extern "C" FUZZ_RT_NO_COVERAGE void __sanitizer_cov_trace_pc_guard(uint32_t *guard) {
  uint8_t *map = fuzz_rt_coverage_map;
  if (!map || !*guard) return;
  uint8_t &c = map[*guard & (fuzz_rt::COVERAGE_SIZE - 1)];
  if (c != 255) c++;
}

namespace fuzz_rt {

inline void map_coverage() {
  const char *path = std::getenv("STITCH_COVERAGE_FILE");
  if (!path) return;
  int fd = ::open(path, O_RDWR);
  if (fd < 0) return;
  void *m = ::mmap(nullptr, COVERAGE_SIZE, PROT_READ | PROT_WRITE, MAP_SHARED, fd, 0);
  ::close(fd);
  if (m != MAP_FAILED) fuzz_rt_coverage_map = static_cast<uint8_t *>(m);
}

inline void open_status() {
  const char *path = std::getenv("STITCH_STATUS_FILE");
  if (!path) return;
  int fd = ::open(path, O_WRONLY | O_CREAT | O_TRUNC | O_APPEND, 0600);
  if (fd >= 0) state().status_fd = fd;
}

}  // namespace fuzz_rt

[[noreturn]] inline void FUZZ_BAIL() { fuzz_rt::bail(); }

#define FUZZ_PARAM(T) (static_cast<T *>(fuzz_rt::param_fixed(sizeof(T))))
#define FUZZ_PARAM_STR() (fuzz_rt::take(fuzz_rt::KIND_STR, 0))
#define FUZZ_PARAM_FILE() (fuzz_rt::take(fuzz_rt::KIND_FILE, 0))

#define FUZZ_SET_ATTR_INT(o, k, v) fuzz_rt::set_int(fuzz_rt::attrs(o), (k), (v))
#define FUZZ_SET_ATTR_STR(o, k, v) fuzz_rt::set_str(fuzz_rt::attrs(o), (k), (v))
#define FUZZ_SET_ATTR_PTR(o, k, v) fuzz_rt::set_ptr(fuzz_rt::attrs(o), (k), (v))
#define FUZZ_GET_ATTR_INT(o, k) (fuzz_rt::get(fuzz_rt::attrs(o), (k), fuzz_rt::Value::INT).i)
#define FUZZ_GET_ATTR_STR(o, k) (fuzz_rt::get(fuzz_rt::attrs(o), (k), fuzz_rt::Value::STR).s)
#define FUZZ_GET_ATTR_PTR(o, k) \
  (const_cast<void *>(fuzz_rt::get(fuzz_rt::attrs(o), (k), fuzz_rt::Value::PTR).p))

#define FUZZ_SET_ATTR_INT_GLOBAL(k, v) fuzz_rt::set_int(fuzz_rt::state().globals, (k), (v))
#define FUZZ_SET_ATTR_STR_GLOBAL(k, v) fuzz_rt::set_str(fuzz_rt::state().globals, (k), (v))
#define FUZZ_SET_ATTR_PTR_GLOBAL(k, v) fuzz_rt::set_ptr(fuzz_rt::state().globals, (k), (v))
#define FUZZ_GET_ATTR_INT_GLOBAL(k) \
  (fuzz_rt::get(fuzz_rt::state().globals, (k), fuzz_rt::Value::INT).i)
#define FUZZ_GET_ATTR_STR_GLOBAL(k) \
  (fuzz_rt::get(fuzz_rt::state().globals, (k), fuzz_rt::Value::STR).s)
#define FUZZ_GET_ATTR_PTR_GLOBAL(k) \
  (const_cast<void *>(fuzz_rt::get(fuzz_rt::state().globals, (k), fuzz_rt::Value::PTR).p))

#endif
