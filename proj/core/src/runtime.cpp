#include <malloc.h>

namespace ppgfm::detail {
namespace {

// Activation tensors run tens of megabytes and are allocated/freed every
// step. Past the default mmap threshold glibc hands such blocks straight
// back to the kernel, so each step pays mmap + page-fault + zero costs
// again (~10 ms per large tensor measured). Keeping big blocks in the
// arena removes that churn.
struct MallocTuning {
  MallocTuning() {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
  }
};
const MallocTuning tuning;

}  // namespace
}  // namespace ppgfm::detail
