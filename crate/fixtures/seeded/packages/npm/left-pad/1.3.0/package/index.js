'use strict';
module.exports = leftPad;

function leftPad(str, len, ch) {
  str = str + '';
  len = len - str.length;
  if (len <= 0) return str;
  if (!ch && ch !== 0) ch = ' ';
  ch = ch + '';
  let pad = '';
  while (len > 0) {
    if (len & 1) pad += ch;
    len >>= 1;
    ch += ch;
  }
  return pad + str;
}
