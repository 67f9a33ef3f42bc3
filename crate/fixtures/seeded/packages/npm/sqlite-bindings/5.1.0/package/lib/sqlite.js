'use strict';

const binding = require('../build/Release/sqlite_bindings.node');

class Database {
  constructor(filename) {
    this.handle = binding.open(filename);
  }

  close() {
    binding.close(this.handle);
  }
}

module.exports = { Database };
