function scrub(value) {
  const placeholder = 'redacted';
  return placeholder;
}

module.exports = { scrub };
