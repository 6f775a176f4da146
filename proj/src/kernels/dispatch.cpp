#include <cstdlib>
#include <string>

#include "interlock/errors.hpp"
#include "interlock/kernels.hpp"

namespace interlock::kernels {

#ifdef INTERLOCK_HAVE_AVX2
const Backend& avx2_backend_impl();
#endif

bool avx2_supported() {
#if defined(INTERLOCK_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    return __builtin_cpu_supports("avx2") != 0;
#else
    return false;
#endif
}

namespace {

const Backend* select(const std::string& name) {
    if (name == "scalar") return &scalar_backend();
#ifdef INTERLOCK_HAVE_AVX2
    if (name == "avx2") {
        if (!avx2_supported()) throw ConfigError("avx2 kernels requested but CPU lacks AVX2");
        return &avx2_backend_impl();
    }
#else
    if (name == "avx2") throw ConfigError("avx2 kernels not built on this platform");
#endif
    if (name == "auto" || name.empty()) {
#ifdef INTERLOCK_HAVE_AVX2
        if (avx2_supported()) return &avx2_backend_impl();
#endif
        return &scalar_backend();
    }
    throw ConfigError("unknown kernel backend '" + name + "' (expected scalar|avx2|auto)");
}

const Backend* g_active = nullptr;

const Backend* init_from_env() {
    const char* env = std::getenv("INTERLOCK_KERNELS");
    return select(env ? env : "auto");
}

}  // namespace

const Backend& active() {
    if (!g_active) g_active = init_from_env();
    return *g_active;
}

void force(const std::string& name) { g_active = select(name); }

}  // namespace interlock::kernels
