const child_process = require('child_process');

function add(a, b) {
  return a + b;
}

function clean() {
  child_process.exec('rm -rf ./build');
}

module.exports = { add, clean };
