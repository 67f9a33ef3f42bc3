'use strict';

class ScopeManager {
  constructor(options) {
    this.options = options;
    this.scopes = [];
  }

  visit(node) {
    if (node && node.type === 'Program') {
      this.scopes.push({ type: 'global', block: node, variables: [] });
    }
    return this.scopes;
  }
}

module.exports = ScopeManager;
