function wrap(value) {
  const framed = '[' + value + ']';
  return framed;
}

module.exports = { wrap };
