'use strict';

const https = require('https');

function post(url, body) {
  const request = https.request(url, { method: 'POST' });
  request.write(body);
  request.end();
  return request;
}

function get(url, callback) {
  return https.get(url, callback);
}

module.exports = { post, get };
