// Acceptance criteria suite; populated as the modules land.
#include <gtest/gtest.h>
