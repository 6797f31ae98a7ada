#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "fewshot/kernels.hpp"

namespace fewshot::kernels {

#ifndef FEWSHOT_HAVE_AVX2
const KernelTable* avx2_table() { return nullptr; }
#endif

bool cpu_supports(Backend backend) {
  switch (backend) {
    case Backend::kScalar:
      return true;
    case Backend::kAvx2:
#if defined(__x86_64__) || defined(__i386__)
      return avx2_table() != nullptr && __builtin_cpu_supports("avx2") &&
             __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

std::vector<Backend> available_backends() {
  std::vector<Backend> out{Backend::kScalar};
  if (cpu_supports(Backend::kAvx2)) out.push_back(Backend::kAvx2);
  return out;
}

std::string_view backend_name(Backend backend) {
  return backend == Backend::kAvx2 ? "avx2" : "scalar";
}

namespace {

const KernelTable* table_for(Backend backend) {
  return backend == Backend::kAvx2 ? avx2_table() : &scalar_table();
}

const KernelTable* initial_table() {
  if (const char* env = std::getenv("FEWSHOT_KERNELS")) {
    const std::string want(env);
    if (want == "scalar") return &scalar_table();
    if (want == "avx2" && cpu_supports(Backend::kAvx2)) return avx2_table();
  }
  return cpu_supports(Backend::kAvx2) ? avx2_table() : &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void select(Backend backend) {
  if (!cpu_supports(backend)) {
    throw std::invalid_argument("kernel backend not supported on this CPU: " +
                                std::string(backend_name(backend)));
  }
  current().store(table_for(backend), std::memory_order_release);
}

}  // namespace fewshot::kernels
