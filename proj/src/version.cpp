#include "qoct/common.hpp"

namespace qoct {

const char* version() {
#ifdef QOCT_VERSION
    return QOCT_VERSION;
#else
    return "unknown";
#endif
}

}  // namespace qoct
