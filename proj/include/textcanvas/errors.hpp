#pragma once

#include <stdexcept>
#include <string>

namespace textcanvas {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define TEXTCANVAS_DEFINE_ERROR(name)            \
  struct name : Error {                          \
    using Error::Error;                          \
  }

TEXTCANVAS_DEFINE_ERROR(EmptyCaption);
TEXTCANVAS_DEFINE_ERROR(IndexOutOfRange);
TEXTCANVAS_DEFINE_ERROR(ShapeMismatch);
TEXTCANVAS_DEFINE_ERROR(EmptySequence);
TEXTCANVAS_DEFINE_ERROR(BatchTooSmall);
TEXTCANVAS_DEFINE_ERROR(NonFiniteLoss);
TEXTCANVAS_DEFINE_ERROR(ConfigMismatch);
TEXTCANVAS_DEFINE_ERROR(CorruptFile);
TEXTCANVAS_DEFINE_ERROR(MissingImage);
TEXTCANVAS_DEFINE_ERROR(MalformedLine);
TEXTCANVAS_DEFINE_ERROR(InvalidDistribution);
TEXTCANVAS_DEFINE_ERROR(MalformedTrace);
TEXTCANVAS_DEFINE_ERROR(ConfigError);

#undef TEXTCANVAS_DEFINE_ERROR

}  // namespace textcanvas
