#pragma once

// Include the HTTP library through this wrapper, never directly.
//
// httplib pulls in glibc's <resolv.h>, which defines `_res` as an
// object-like macro. Eigen names a GEMM kernel parameter `_res`, so any
// translation unit that sees httplib before Eigen fails to compile with
// baffling "no declaration matches" errors. Undefining the macro after the
// library is parsed makes inclusion order irrelevant.

#include <httplib.h>

#ifdef _res
#undef _res
#endif
