#include <ruby.h>

void Init_fast_json_ext(void) {}
