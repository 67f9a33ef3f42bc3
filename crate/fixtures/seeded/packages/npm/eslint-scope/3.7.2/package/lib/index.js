'use strict';

const ScopeManager = require('./scope-manager');

function analyze(tree, providedOptions) {
  const options = Object.assign({ ecmaVersion: 5, sourceType: 'script' }, providedOptions);
  const manager = new ScopeManager(options);
  manager.visit(tree);
  return manager;
}

module.exports = { analyze, version: '3.7.2' };
